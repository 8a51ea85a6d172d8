#include "cfd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "cfd/checkpoint.hpp"

namespace cfd {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kRidgeAmplitude = 0.22;
constexpr std::int64_t kDistractorsPerImage = 4;
constexpr std::int64_t kDistractorPool = 3;

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Fixed per-material texture signature (frequency, orientation). The table is
// ordered so the held-out material sits inside the frequency band spanned by
// the training materials.
struct MaterialSig {
  double freq;
  double theta;
};

MaterialSig material_signature(int material) {
  static const MaterialSig table[] = {
      {0.26, 0.70}, {0.40, 1.90}, {0.30, 2.80}, {0.35, 1.10},
      {0.32, 0.20}, {0.38, 2.30}, {0.28, 1.50}, {0.42, 0.90},
  };
  return table[static_cast<std::size_t>((material - 1) % 8)];
}

// Distractor pool shared by every class. The patches live in the same
// frequency band as the material textures (at their own orientations), so a
// channel that fires on them carries genuinely class-ambiguous evidence.
struct DistractorSig {
  double freq;
  double theta;
};

DistractorSig distractor_signature(std::int64_t d) {
  static const DistractorSig table[] = {
      {0.28, 2.20}, {0.34, 0.40}, {0.38, 1.60},
  };
  return table[static_cast<std::size_t>(d % kDistractorPool)];
}

Tensor synth_image(const SynthConfig& cfg, int material, Rng& rng) {
  const std::int64_t hw = cfg.image_size;
  Tensor img = Tensor::zeros({1, hw, hw});

  const double freq = rng.uniform(cfg.ridge_freq_min, cfg.ridge_freq_max);
  const double theta = rng.uniform(0.0, kPi);
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (std::int64_t y = 0; y < hw; ++y)
    for (std::int64_t x = 0; x < hw; ++x) {
      const double u = static_cast<double>(x) * ct + static_cast<double>(y) * st;
      img.values[static_cast<std::size_t>(y * hw + x)] =
          0.5 + kRidgeAmplitude * std::sin(2.0 * kPi * freq * u + phase);
    }

  // Material texture; the phase draw happens for live images too so the RNG
  // stream is identical across classes.
  const double mphase = rng.uniform(0.0, 2.0 * kPi);
  if (material > 0) {
    const MaterialSig sig = material_signature(material);
    const double cm = std::cos(sig.theta), sm = std::sin(sig.theta);
    for (std::int64_t y = 0; y < hw; ++y)
      for (std::int64_t x = 0; x < hw; ++x) {
        const double u = static_cast<double>(x) * cm + static_cast<double>(y) * sm;
        img.values[static_cast<std::size_t>(y * hw + x)] +=
            cfg.material_strength * std::sin(2.0 * kPi * sig.freq * u + mphase);
      }
  }

  // Class-ambiguous distractor patches. All randomness is drawn regardless of
  // strength so datasets generated with different strengths stay aligned.
  const std::int64_t patch = std::max<std::int64_t>(4, hw / 3);
  for (std::int64_t p = 0; p < kDistractorsPerImage; ++p) {
    const std::int64_t cy = rng.uniform_int(hw);
    const std::int64_t cx = rng.uniform_int(hw);
    const std::int64_t which = rng.uniform_int(kDistractorPool);
    const double pphase = rng.uniform(0.0, 2.0 * kPi);
    if (cfg.distractor_strength == 0.0) continue;
    const DistractorSig sig = distractor_signature(which);
    const double cd = std::cos(sig.theta), sd = std::sin(sig.theta);
    const std::int64_t y0 = std::max<std::int64_t>(0, cy - patch / 2);
    const std::int64_t y1 = std::min(hw, cy - patch / 2 + patch);
    const std::int64_t x0 = std::max<std::int64_t>(0, cx - patch / 2);
    const std::int64_t x1 = std::min(hw, cx - patch / 2 + patch);
    for (std::int64_t y = y0; y < y1; ++y)
      for (std::int64_t x = x0; x < x1; ++x) {
        const double u = static_cast<double>(x) * cd + static_cast<double>(y) * sd;
        img.values[static_cast<std::size_t>(y * hw + x)] +=
            cfg.distractor_strength * std::sin(2.0 * kPi * sig.freq * u + pphase);
      }
  }

  for (double& v : img.values) {
    v += rng.normal(0.0, cfg.noise_sigma);
    v = std::clamp(v, 0.0, 1.0);
  }
  return img;
}

}  // namespace

std::vector<int> Dataset::attack_labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(s.attack);
  return out;
}

SynthSplit synth_generate(const SynthConfig& cfg) {
  check(cfg.n_materials >= 2,
        "synth_generate: need n_materials >= 2 for cross-material splits, got " +
            std::to_string(cfg.n_materials));
  check(cfg.image_size >= 8, "synth_generate: image_size must be at least 8");
  check(cfg.train_per_class > 0 && cfg.test_per_class > 0,
        "synth_generate: per-class counts must be positive");
  check(cfg.ridge_freq_min > 0 && cfg.ridge_freq_max >= cfg.ridge_freq_min,
        "synth_generate: invalid ridge frequency range");

  SynthSplit split;
  for (int m = 1; m < cfg.n_materials; ++m) split.train_materials.push_back(m);
  split.test_materials.push_back(static_cast<int>(cfg.n_materials));

  Rng rng(cfg.seed, Stream::kData);
  std::uint32_t next_id = 0;

  auto fill = [&](Dataset& ds, const std::vector<int>& materials,
                  std::int64_t per_class) {
    ds.channels = 1;
    ds.height = cfg.image_size;
    ds.width = cfg.image_size;
    std::vector<int> classes = {0};
    classes.insert(classes.end(), materials.begin(), materials.end());
    for (int cls : classes)
      for (std::int64_t i = 0; i < per_class; ++i) {
        Sample s;
        s.image = synth_image(cfg, cls, rng);
        s.attack = cls;
        s.id = next_id++;
        ds.samples.push_back(std::move(s));
      }
  };
  fill(split.train, split.train_materials, cfg.train_per_class);
  fill(split.test, split.test_materials, cfg.test_per_class);
  return split;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

std::int64_t cutout_side(const AugmentConfig& cfg, std::int64_t h, std::int64_t w) {
  const double side = cfg.cutout_side_ratio * static_cast<double>(std::min(h, w));
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(side)));
}

void cutout(Tensor& image, const AugmentConfig& cfg, Rng& rng) {
  check(image.shape.size() == 3, "cutout: image must be [C,H,W]");
  const std::int64_t c = image.shape[0], h = image.shape[1], w = image.shape[2];
  const std::int64_t side = cutout_side(cfg, h, w);
  for (std::int64_t t = 0; t < cfg.cutout_count; ++t) {
    const std::int64_t cy = rng.uniform_int(h);
    const std::int64_t cx = rng.uniform_int(w);
    const std::int64_t y0 = std::max<std::int64_t>(0, cy - side / 2);
    const std::int64_t y1 = std::min(h, cy - side / 2 + side);
    const std::int64_t x0 = std::max<std::int64_t>(0, cx - side / 2);
    const std::int64_t x1 = std::min(w, cx - side / 2 + side);
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t y = y0; y < y1; ++y)
        for (std::int64_t x = x0; x < x1; ++x)
          image.values[static_cast<std::size_t>((ch * h + y) * w + x)] = 0.0;
  }
}

void hflip(Tensor& image) {
  check(image.shape.size() == 3, "hflip: image must be [C,H,W]");
  const std::int64_t c = image.shape[0], h = image.shape[1], w = image.shape[2];
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w / 2; ++x)
        std::swap(image.values[static_cast<std::size_t>((ch * h + y) * w + x)],
                  image.values[static_cast<std::size_t>((ch * h + y) * w + (w - 1 - x))]);
}

void vflip(Tensor& image) {
  check(image.shape.size() == 3, "vflip: image must be [C,H,W]");
  const std::int64_t c = image.shape[0], h = image.shape[1], w = image.shape[2];
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h / 2; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        std::swap(image.values[static_cast<std::size_t>((ch * h + y) * w + x)],
                  image.values[static_cast<std::size_t>((ch * h + (h - 1 - y)) * w + x)]);
}

Tensor rotate(const Tensor& image, double degrees, Interp interp) {
  check(image.shape.size() == 3, "rotate: image must be [C,H,W]");
  const std::int64_t c = image.shape[0], h = image.shape[1], w = image.shape[2];
  const double rad = degrees * kPi / 180.0;
  const double cr = std::cos(rad), sr = std::sin(rad);
  const double cy = static_cast<double>(h - 1) / 2.0;
  const double cx = static_cast<double>(w - 1) / 2.0;
  Tensor out = Tensor::zeros(image.shape);
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        // inverse map: rotate destination by -angle around the center
        const double dy = static_cast<double>(y) - cy;
        const double dx = static_cast<double>(x) - cx;
        const double sy = cy + (-sr * dx + cr * dy);
        const double sx = cx + (cr * dx + sr * dy);
        double v = 0.0;
        if (interp == Interp::kNearest) {
          const std::int64_t ny = static_cast<std::int64_t>(std::lround(sy));
          const std::int64_t nx = static_cast<std::int64_t>(std::lround(sx));
          if (ny >= 0 && ny < h && nx >= 0 && nx < w)
            v = image.values[static_cast<std::size_t>((ch * h + ny) * w + nx)];
        } else {
          const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
          const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
          const double fy = sy - static_cast<double>(y0);
          const double fx = sx - static_cast<double>(x0);
          auto pix = [&](std::int64_t yy, std::int64_t xx) {
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
            return image.values[static_cast<std::size_t>((ch * h + yy) * w + xx)];
          };
          v = (1 - fy) * ((1 - fx) * pix(y0, x0) + fx * pix(y0, x0 + 1)) +
              fy * ((1 - fx) * pix(y0 + 1, x0) + fx * pix(y0 + 1, x0 + 1));
        }
        out.values[static_cast<std::size_t>((ch * h + y) * w + x)] = v;
      }
  return out;
}

Tensor flip_rotate(const Tensor& image, const AugmentConfig& cfg, Rng& rng) {
  Tensor out = image;
  const bool do_h = rng.bernoulli(cfg.hflip_prob);
  const bool do_v = rng.bernoulli(cfg.vflip_prob);
  const double angle = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees);
  if (do_h) hflip(out);
  if (do_v) vflip(out);
  return rotate(out, angle, cfg.nearest_rotation ? Interp::kNearest : Interp::kBilinear);
}

Tensor augment(const Tensor& image, const AugmentConfig& cfg, Rng& rng) {
  Tensor out = flip_rotate(image, cfg, rng);
  cutout(out, cfg, rng);
  return out;
}

// ---------------------------------------------------------------------------
// Batch sampling
// ---------------------------------------------------------------------------

std::vector<std::vector<std::int64_t>> balanced_batches(const Dataset& dataset,
                                                        std::int64_t batch_size,
                                                        Rng& rng) {
  check(dataset.size() > 0, "balanced_batches: empty dataset");
  std::map<int, std::vector<std::int64_t>> by_class;
  for (std::int64_t i = 0; i < dataset.size(); ++i)
    by_class[dataset.samples[static_cast<std::size_t>(i)].attack].push_back(i);
  const std::int64_t ncls = static_cast<std::int64_t>(by_class.size());
  check(batch_size >= 2 * ncls,
        "balanced_batches: batch_size " + std::to_string(batch_size) +
            " < 2 * " + std::to_string(ncls) + " attack classes present");

  struct Queue {
    std::vector<std::int64_t> order;
    std::size_t pos = 0;
    std::int64_t alloc = 0;
  };
  std::vector<Queue> queues;
  for (auto& [cls, idx] : by_class) {
    Queue q;
    q.order = idx;
    rng.shuffle(q.order);
    queues.push_back(std::move(q));
  }

  const std::int64_t base = batch_size / ncls;
  const std::int64_t rem = batch_size % ncls;
  std::int64_t n_batches = 0;
  for (std::int64_t j = 0; j < ncls; ++j) {
    auto& q = queues[static_cast<std::size_t>(j)];
    q.alloc = base + (j < rem ? 1 : 0);
    const std::int64_t sz = static_cast<std::int64_t>(q.order.size());
    n_batches = std::max(n_batches, (sz + q.alloc - 1) / q.alloc);
  }

  std::vector<std::vector<std::int64_t>> batches;
  batches.reserve(static_cast<std::size_t>(n_batches));
  for (std::int64_t b = 0; b < n_batches; ++b) {
    std::vector<std::int64_t> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    for (auto& q : queues)
      for (std::int64_t t = 0; t < q.alloc; ++t) {
        if (q.pos == q.order.size()) {  // recycle exhausted class
          rng.shuffle(q.order);
          q.pos = 0;
        }
        batch.push_back(q.order[q.pos++]);
      }
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  check(dataset.size() > 0, "save_dataset: empty dataset");
  NamedArray images;
  images.name = "images";
  images.shape = {dataset.size(), dataset.channels, dataset.height, dataset.width};
  images.values.reserve(static_cast<std::size_t>(numel(images.shape)));
  NamedArray attack{"attack", {dataset.size()}, {}};
  NamedArray id{"id", {dataset.size()}, {}};
  for (const Sample& s : dataset.samples) {
    check(s.image.shape ==
              Shape({dataset.channels, dataset.height, dataset.width}),
          "save_dataset: sample image shape mismatch");
    images.values.insert(images.values.end(), s.image.values.begin(),
                         s.image.values.end());
    attack.values.push_back(static_cast<double>(s.attack));
    id.values.push_back(static_cast<double>(s.id));
  }
  write_container(path, {images, attack, id});
}

namespace {

Dataset load_dataset_container(const std::filesystem::path& path) {
  const auto arrays = read_container(path);
  const NamedArray* images = find_array(arrays, "images");
  const NamedArray* attack = find_array(arrays, "attack");
  const NamedArray* id = find_array(arrays, "id");
  if (!images || !attack || !id)
    throw std::runtime_error(path.string() +
                             ": dataset container needs arrays images/attack/id");
  if (images->shape.size() != 4)
    throw std::runtime_error(path.string() + ": images array must be rank 4");
  const std::int64_t n = images->shape[0];
  if (attack->shape != Shape({n}) || id->shape != Shape({n}))
    throw std::runtime_error(path.string() +
                             ": attack/id arrays must be length " + std::to_string(n));
  Dataset ds;
  ds.channels = images->shape[1];
  ds.height = images->shape[2];
  ds.width = images->shape[3];
  const std::int64_t per = ds.channels * ds.height * ds.width;
  for (std::int64_t i = 0; i < n; ++i) {
    Sample s;
    s.image = Tensor({ds.channels, ds.height, ds.width},
                     std::vector<double>(images->values.begin() + i * per,
                                         images->values.begin() + (i + 1) * per));
    s.attack = static_cast<int>(attack->values[static_cast<std::size_t>(i)]);
    s.id = static_cast<std::uint32_t>(id->values[static_cast<std::size_t>(i)]);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Dataset load_dataset_pgm_dir(const std::filesystem::path& dir) {
  const std::filesystem::path labels = dir / "labels.csv";
  std::ifstream f(labels);
  if (!f)
    throw std::runtime_error("cannot open sidecar " + labels.string());
  std::string line;
  if (!std::getline(f, line) || line != "id,attack")
    throw std::runtime_error(labels.string() +
                             ":1: expected header 'id,attack', got '" + line + "'");
  Dataset ds;
  std::int64_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error(labels.string() + ":" + std::to_string(lineno) +
                               ": expected 'id,attack'");
    Sample s;
    try {
      s.id = static_cast<std::uint32_t>(std::stoul(line.substr(0, comma)));
      s.attack = std::stoi(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw std::runtime_error(labels.string() + ":" + std::to_string(lineno) +
                               ": malformed row '" + line + "'");
    }
    const std::filesystem::path img = dir / (std::to_string(s.id) + ".pgm");
    std::int64_t h = 0, w = 0;
    std::vector<double> values = read_pgm(img, h, w);
    if (ds.samples.empty()) {
      ds.height = h;
      ds.width = w;
    } else if (h != ds.height || w != ds.width) {
      throw std::runtime_error(img.string() + ": image size " + std::to_string(w) +
                               "x" + std::to_string(h) + " differs from first image");
    }
    s.image = Tensor({1, h, w}, std::move(values));
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty())
    throw std::runtime_error(labels.string() + ": no samples listed");
  ds.channels = 1;
  return ds;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return load_dataset_pgm_dir(path);
  return load_dataset_container(path);
}

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string pgm_token(std::istream& in, const std::filesystem::path& path) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty())
    throw std::runtime_error(path.string() + ": truncated PGM header");
  return tok;
}

}  // namespace

std::vector<double> read_pgm(const std::filesystem::path& path, std::int64_t& h,
                             std::int64_t& w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  if (pgm_token(f, path) != "P5")
    throw std::runtime_error(path.string() + ": not a P5 PGM");
  std::int64_t maxval = 0;
  try {
    w = std::stoll(pgm_token(f, path));
    h = std::stoll(pgm_token(f, path));
    maxval = std::stoll(pgm_token(f, path));
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0)
    throw std::runtime_error(path.string() + ": nonpositive PGM dimensions");
  if (maxval < 1 || maxval > 255)
    throw std::runtime_error(path.string() + ": unsupported maxval " +
                             std::to_string(maxval) + " (need 1..255)");
  std::vector<unsigned char> raw(static_cast<std::size_t>(h * w));
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (f.gcount() != static_cast<std::streamsize>(raw.size()))
    throw std::runtime_error(path.string() + ": truncated PGM pixel data after byte " +
                             std::to_string(f.gcount()));
  std::vector<double> values(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    values[i] = static_cast<double>(raw[i]) / static_cast<double>(maxval);
  return values;
}

void write_pgm(const std::filesystem::path& path, const std::vector<double>& values,
               std::int64_t h, std::int64_t w) {
  check(static_cast<std::int64_t>(values.size()) == h * w,
        "write_pgm: value count does not match dimensions");
  std::ostringstream os;
  os << "P5\n" << w << " " << h << "\n255\n";
  std::string out = os.str();
  out.reserve(out.size() + values.size());
  for (double v : values) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    out.push_back(static_cast<char>(
        static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
  write_file_atomic(path, out);
}

}  // namespace cfd
