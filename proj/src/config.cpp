#include "cfd/config.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cfd {

Variant parse_variant(const std::string& name) {
  if (name == "baseline") return Variant::kBaseline;
  if (name == "pa_only") return Variant::kPaOnly;
  if (name == "cfd_only") return Variant::kCfdOnly;
  if (name == "cfd_regularize") return Variant::kCfdRegularize;
  if (name == "full") return Variant::kFull;
  throw std::invalid_argument(
      "unknown variant '" + name +
      "' (expected baseline|pa_only|cfd_only|cfd_regularize|full)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kPaOnly: return "pa_only";
    case Variant::kCfdOnly: return "cfd_only";
    case Variant::kCfdRegularize: return "cfd_regularize";
    case Variant::kFull: return "full";
  }
  return "full";
}

bool variant_uses_denoise(Variant v) {
  return v == Variant::kCfdOnly || v == Variant::kCfdRegularize ||
         v == Variant::kFull;
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  if (k < 1 || k > model.feature_channels)
    throw std::invalid_argument("config: k=" + std::to_string(k) +
                                " outside [1," +
                                std::to_string(model.feature_channels) + "]");
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2");
  if (!(lr > 0)) throw std::invalid_argument("config: lr must be positive");
  if (!(dis_decay > 0) || dis_decay > 1.0)
    throw std::invalid_argument("config: dis_decay must be in (0,1]");
  if (synth.n_materials < 2)
    throw std::invalid_argument("config: n_materials must be >= 2");
  if (model.input_h != synth.image_size || model.input_w != synth.image_size ||
      model.input_ch != 1)
    throw std::invalid_argument(
        "config: model input dims must match the synthetic image_size (single channel)");
  if (augment.cutout_count < 0)
    throw std::invalid_argument("config: cutout_count must be >= 0");
  if (!(augment.cutout_side_ratio > 0) || augment.cutout_side_ratio > 1.0)
    throw std::invalid_argument("config: cutout_side_ratio must be in (0,1]");
  for (double p : {augment.hflip_prob, augment.vflip_prob})
    if (p < 0 || p > 1)
      throw std::invalid_argument("config: flip probabilities must be in [0,1]");
  if (augment.rotation_degrees < 0)
    throw std::invalid_argument("config: rotation_degrees must be >= 0");
}

namespace {

std::vector<ConvStage> parse_stages(const std::string& text) {
  // "8:2,16:2,16:1" -> {{8,2},{16,2},{16,1}}
  std::vector<ConvStage> stages;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("generator_stages entry '" + item +
                                  "' is not 'channels:stride'");
    stages.push_back({std::stoll(item.substr(0, colon)),
                      std::stoll(item.substr(colon + 1))});
  }
  if (stages.empty())
    throw std::invalid_argument("generator_stages must not be empty");
  return stages;
}

std::string stages_to_string(const std::vector<ConvStage>& stages) {
  std::ostringstream os;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i) os << ",";
    os << stages[i].out_channels << ":" << stages[i].stride;
  }
  return os.str();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::int64_t lineno = 0;
  std::map<std::string, bool> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                  ": empty key or value");
    if (seen[key])
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                  ": duplicate key '" + key + "'");
    seen[key] = true;

    try {
      auto i64 = [&] { return std::stoll(value); };
      auto f64 = [&] { return std::stod(value); };
      if (key == "input_h") cfg.model.input_h = i64();
      else if (key == "input_w") cfg.model.input_w = i64();
      else if (key == "input_ch") cfg.model.input_ch = i64();
      else if (key == "feature_channels") cfg.model.feature_channels = i64();
      else if (key == "embed_dim") cfg.model.embed_dim = i64();
      else if (key == "generator_stages") cfg.model.generator_stages = parse_stages(value);
      else if (key == "n_materials") cfg.synth.n_materials = i64();
      else if (key == "image_size") cfg.synth.image_size = i64();
      else if (key == "ridge_freq_min") cfg.synth.ridge_freq_min = f64();
      else if (key == "ridge_freq_max") cfg.synth.ridge_freq_max = f64();
      else if (key == "material_strength") cfg.synth.material_strength = f64();
      else if (key == "distractor_strength") cfg.synth.distractor_strength = f64();
      else if (key == "noise_sigma") cfg.synth.noise_sigma = f64();
      else if (key == "train_per_class") cfg.synth.train_per_class = i64();
      else if (key == "test_per_class") cfg.synth.test_per_class = i64();
      else if (key == "cutout_count") cfg.augment.cutout_count = i64();
      else if (key == "cutout_side_ratio") cfg.augment.cutout_side_ratio = f64();
      else if (key == "hflip_prob") cfg.augment.hflip_prob = f64();
      else if (key == "vflip_prob") cfg.augment.vflip_prob = f64();
      else if (key == "rotation_degrees") cfg.augment.rotation_degrees = f64();
      else if (key == "lambda1") cfg.loss.lambda1 = f64();
      else if (key == "lambda2") cfg.loss.lambda2 = f64();
      else if (key == "lambda3") cfg.loss.lambda3 = f64();
      else if (key == "margin") cfg.loss.margin = f64();
      else if (key == "k") cfg.k = i64();
      else if (key == "epochs") cfg.epochs = i64();
      else if (key == "batch_size") cfg.batch_size = i64();
      else if (key == "lr") cfg.lr = f64();
      else if (key == "dis_decay") cfg.dis_decay = f64();
      else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
      else if (key == "variant") cfg.variant = parse_variant(value);
      else
        throw std::invalid_argument("unknown key '" + key + "'");
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": " +
                                  e.what());
    } catch (const std::exception&) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                  ": cannot parse value '" + value + "' for '" +
                                  key + "'");
    }
  }
  cfg.synth.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path.string());
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return parse_run_config(text, path.string());
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "input_h = " << cfg.model.input_h << "\n";
  os << "input_w = " << cfg.model.input_w << "\n";
  os << "input_ch = " << cfg.model.input_ch << "\n";
  os << "feature_channels = " << cfg.model.feature_channels << "\n";
  os << "embed_dim = " << cfg.model.embed_dim << "\n";
  os << "generator_stages = " << stages_to_string(cfg.model.generator_stages) << "\n";
  os << "n_materials = " << cfg.synth.n_materials << "\n";
  os << "image_size = " << cfg.synth.image_size << "\n";
  os << "ridge_freq_min = " << cfg.synth.ridge_freq_min << "\n";
  os << "ridge_freq_max = " << cfg.synth.ridge_freq_max << "\n";
  os << "material_strength = " << cfg.synth.material_strength << "\n";
  os << "distractor_strength = " << cfg.synth.distractor_strength << "\n";
  os << "noise_sigma = " << cfg.synth.noise_sigma << "\n";
  os << "train_per_class = " << cfg.synth.train_per_class << "\n";
  os << "test_per_class = " << cfg.synth.test_per_class << "\n";
  os << "cutout_count = " << cfg.augment.cutout_count << "\n";
  os << "cutout_side_ratio = " << cfg.augment.cutout_side_ratio << "\n";
  os << "hflip_prob = " << cfg.augment.hflip_prob << "\n";
  os << "vflip_prob = " << cfg.augment.vflip_prob << "\n";
  os << "rotation_degrees = " << cfg.augment.rotation_degrees << "\n";
  os << "lambda1 = " << cfg.loss.lambda1 << "\n";
  os << "lambda2 = " << cfg.loss.lambda2 << "\n";
  os << "lambda3 = " << cfg.loss.lambda3 << "\n";
  os << "margin = " << cfg.loss.margin << "\n";
  os << "k = " << cfg.k << "\n";
  os << "epochs = " << cfg.epochs << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "lr = " << cfg.lr << "\n";
  os << "dis_decay = " << cfg.dis_decay << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "variant = " << variant_name(cfg.variant) << "\n";
  return os.str();
}

}  // namespace cfd
