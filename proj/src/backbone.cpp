#include "cfd/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "cfd/kernels.hpp"
#include "cfd/rng.hpp"

namespace cfd {

namespace {

constexpr std::int64_t kKernel = 3;
constexpr std::int64_t kPad = 1;

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::int64_t conv_out(std::int64_t extent, std::int64_t stride) {
  return (extent + 2 * kPad - kKernel) / stride + 1;
}

Tensor gaussian_weights(Shape shape, std::int64_t fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.values) v = rng.normal(0.0, sd);
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  check(input_h > 0 && input_w > 0 && input_ch > 0,
        "config: input dims must be positive");
  check(feature_channels > 0, "config: feature_channels must be positive");
  check(embed_dim > 0, "config: embed_dim must be positive");
  check(n_classes == 2, "config: n_classes is fixed at 2 (live, spoof)");
  check(!generator_stages.empty(), "config: generator needs at least one stage");
  for (const auto& s : generator_stages)
    check(s.out_channels > 0 && s.stride > 0,
          "config: generator stage extents must be positive");
  check(generator_stages.back().out_channels == feature_channels,
        "config: feature_channels (" + std::to_string(feature_channels) +
            ") must equal last generator stage out_channels (" +
            std::to_string(generator_stages.back().out_channels) + ")");
  check(feature_h() >= 1 && feature_w() >= 1,
        "config: generator strides collapse the spatial grid");
}

std::int64_t ModelConfig::feature_h() const {
  std::int64_t h = input_h;
  for (const auto& s : generator_stages) h = conv_out(h, s.stride);
  return h;
}

std::int64_t ModelConfig::feature_w() const {
  std::int64_t w = input_w;
  for (const auto& s : generator_stages) w = conv_out(w, s.stride);
  return w;
}

ModelConfig ModelConfig::paper_scale() {
  ModelConfig cfg;
  cfg.feature_channels = 160;
  cfg.generator_stages = {{32, 2}, {96, 2}, {160, 1}};
  return cfg;
}

std::vector<Tensor*> Model::all_params() {
  std::vector<Tensor*> out;
  for (auto* group : {&theta_g, &theta_e, &theta_c})
    for (auto& p : *group) out.push_back(&p.value);
  return out;
}

std::vector<const Tensor*> Model::all_params() const {
  std::vector<const Tensor*> out;
  for (const auto* group : {&theta_g, &theta_e, &theta_c})
    for (const auto& p : *group) out.push_back(&p.value);
  return out;
}

std::vector<std::string> Model::param_names() const {
  std::vector<std::string> out;
  for (const auto* group : {&theta_g, &theta_e, &theta_c})
    for (const auto& p : *group) out.push_back(p.name);
  return out;
}

bool Model::all_finite() const {
  for (const Tensor* p : all_params())
    for (double v : p->values)
      if (!std::isfinite(v)) return false;
  return true;
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed, Stream::kInit);
  Model m;
  m.config = config;

  std::int64_t cin = config.input_ch;
  for (std::size_t s = 0; s < config.generator_stages.size(); ++s) {
    const auto& stage = config.generator_stages[s];
    const std::int64_t fan_in = cin * kKernel * kKernel;
    m.theta_g.push_back({"g.stage" + std::to_string(s) + ".w",
                         gaussian_weights({stage.out_channels, cin, kKernel, kKernel},
                                          fan_in, rng)});
    m.theta_g.push_back({"g.stage" + std::to_string(s) + ".b",
                         Tensor::zeros({stage.out_channels}, true)});
    cin = stage.out_channels;
  }

  const std::int64_t c = config.feature_channels;
  m.theta_e.push_back({"e.conv.w",
                       gaussian_weights({c, c, kKernel, kKernel}, c * kKernel * kKernel, rng)});
  m.theta_e.push_back({"e.conv.b", Tensor::zeros({c}, true)});
  m.theta_e.push_back({"e.fc.w", gaussian_weights({config.embed_dim, c}, c, rng)});
  m.theta_e.push_back({"e.fc.b", Tensor::zeros({config.embed_dim}, true)});

  m.theta_c.push_back({"c.fc.w",
                       gaussian_weights({config.n_classes, config.embed_dim},
                                        config.embed_dim, rng)});
  m.theta_c.push_back({"c.fc.b", Tensor::zeros({config.n_classes}, true)});
  return m;
}

// ---------------------------------------------------------------------------
// Tape forward
// ---------------------------------------------------------------------------

BackboneRun::BackboneRun(Tape& tape, const Model& model, bool trainable)
    : tape_(tape), config_(model.config) {
  const auto params = model.all_params();
  params_.reserve(params.size());
  g_begin_ = 0;
  e_begin_ = model.theta_g.size();
  c_begin_ = e_begin_ + model.theta_e.size();
  for (const Tensor* p : params) {
    Tensor copy = *p;
    copy.requires_grad = trainable;
    copy.node_id = -1;
    copy.grad.clear();
    params_.push_back(std::move(copy));
  }
  for (Tensor& p : params_) tape_.leaf(p);
}

Tensor BackboneRun::generator(const Tensor& x) {
  check(x.shape.size() == 4 && x.shape[1] == config_.input_ch &&
            x.shape[2] == config_.input_h && x.shape[3] == config_.input_w,
        "generator_forward: input " + shape_str(x.shape) +
            " does not match configured [N," + std::to_string(config_.input_ch) +
            "," + std::to_string(config_.input_h) + "," +
            std::to_string(config_.input_w) + "]");
  Tensor h = x;
  for (std::size_t s = 0; s < config_.generator_stages.size(); ++s) {
    const Tensor& w = params_[g_begin_ + 2 * s];
    const Tensor& b = params_[g_begin_ + 2 * s + 1];
    h = tape_.relu(tape_.conv2d(h, w, b, config_.generator_stages[s].stride, kPad));
  }
  check(h.shape[1] == config_.feature_channels,
        "generator_forward: produced " + std::to_string(h.shape[1]) +
            " channels, config says " + std::to_string(config_.feature_channels));
  return h;
}

Tensor BackboneRun::embedding(const Tensor& f) {
  check(f.shape.size() == 4 && f.shape[1] == config_.feature_channels,
        "embedding_forward: feature map " + shape_str(f.shape) +
            " does not carry c=" + std::to_string(config_.feature_channels) +
            " channels");
  Tensor h = tape_.relu(tape_.conv2d(f, params_[e_begin_], params_[e_begin_ + 1], 1, kPad));
  Tensor pooled = tape_.global_avgpool(h);
  return tape_.dense(pooled, params_[e_begin_ + 2], params_[e_begin_ + 3]);
}

Tensor BackboneRun::classifier(const Tensor& e) {
  check(e.shape.size() == 2 && e.shape[1] == config_.embed_dim,
        "classifier_forward: embedding " + shape_str(e.shape) +
            " does not match embed_dim=" + std::to_string(config_.embed_dim));
  return tape_.dense(e, params_[c_begin_], params_[c_begin_ + 1]);
}

std::vector<std::vector<double>> BackboneRun::take_param_grads() {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (Tensor& p : params_) out.push_back(std::move(p.grad));
  return out;
}

// ---------------------------------------------------------------------------
// Value path
// ---------------------------------------------------------------------------

std::vector<double> eval_generator(const Model& model, const std::vector<double>& x,
                                   std::int64_t n) {
  const ModelConfig& cfg = model.config;
  check(static_cast<std::int64_t>(x.size()) ==
            n * cfg.input_ch * cfg.input_h * cfg.input_w,
        "eval_generator: input buffer size does not match [n,Cin,H,W]");
  std::vector<double> cur = x;
  std::int64_t cin = cfg.input_ch, h = cfg.input_h, w = cfg.input_w;
  for (std::size_t s = 0; s < cfg.generator_stages.size(); ++s) {
    const auto& stage = cfg.generator_stages[s];
    kernels::Conv2dDims d;
    d.n = n;
    d.cin = cin;
    d.h = h;
    d.w = w;
    d.cout = stage.out_channels;
    d.kh = kKernel;
    d.kw = kKernel;
    d.stride = stage.stride;
    d.pad = kPad;
    d.oh = conv_out(h, stage.stride);
    d.ow = conv_out(w, stage.stride);
    std::vector<double> next(static_cast<std::size_t>(n * d.cout * d.oh * d.ow));
    kernels::conv2d_forward(cur.data(), model.theta_g[2 * s].value.values.data(),
                            model.theta_g[2 * s + 1].value.values.data(),
                            next.data(), d);
    for (double& v : next) v = v > 0.0 ? v : 0.0;
    cur = std::move(next);
    cin = d.cout;
    h = d.oh;
    w = d.ow;
  }
  return cur;
}

std::vector<double> eval_head_probs(const Model& model, const std::vector<double>& f,
                                    std::int64_t n, std::vector<double>* emb_out) {
  const ModelConfig& cfg = model.config;
  const std::int64_t c = cfg.feature_channels;
  const std::int64_t fh = cfg.feature_h(), fw = cfg.feature_w();
  check(static_cast<std::int64_t>(f.size()) == n * c * fh * fw,
        "eval_head_probs: feature buffer size does not match [n,c,fh,fw]");

  kernels::Conv2dDims d;
  d.n = n;
  d.cin = c;
  d.h = fh;
  d.w = fw;
  d.cout = c;
  d.kh = kKernel;
  d.kw = kKernel;
  d.stride = 1;
  d.pad = kPad;
  d.oh = fh;
  d.ow = fw;
  std::vector<double> conv(static_cast<std::size_t>(n * c * fh * fw));
  kernels::conv2d_forward(f.data(), model.theta_e[0].value.values.data(),
                          model.theta_e[1].value.values.data(), conv.data(), d);
  for (double& v : conv) v = v > 0.0 ? v : 0.0;

  std::vector<double> pooled(static_cast<std::size_t>(n * c));
  kernels::avgpool_forward(conv.data(), pooled.data(), n, c, fh, fw);

  const std::int64_t ed = cfg.embed_dim;
  std::vector<double> emb(static_cast<std::size_t>(n * ed));
  kernels::dense_forward(pooled.data(), model.theta_e[2].value.values.data(),
                         model.theta_e[3].value.values.data(), emb.data(), n, c, ed);

  std::vector<double> logits(static_cast<std::size_t>(n * 2));
  kernels::dense_forward(emb.data(), model.theta_c[0].value.values.data(),
                         model.theta_c[1].value.values.data(), logits.data(), n,
                         ed, 2);

  std::vector<double> probs(static_cast<std::size_t>(n * 2));
  for (std::int64_t i = 0; i < n; ++i) {
    const double a = logits[static_cast<std::size_t>(2 * i)];
    const double b = logits[static_cast<std::size_t>(2 * i + 1)];
    const double mx = a > b ? a : b;
    const double ea = std::exp(a - mx), eb = std::exp(b - mx);
    probs[static_cast<std::size_t>(2 * i)] = ea / (ea + eb);
    probs[static_cast<std::size_t>(2 * i + 1)] = eb / (ea + eb);
  }
  if (emb_out) *emb_out = std::move(emb);
  return probs;
}

std::vector<double> eval_spoof_scores(const Model& model, const std::vector<double>& x,
                                      std::int64_t n,
                                      const std::vector<std::uint8_t>* keep) {
  std::vector<double> f = eval_generator(model, x, n);
  if (keep) {
    const std::int64_t c = model.config.feature_channels;
    check(static_cast<std::int64_t>(keep->size()) == c,
          "eval_spoof_scores: mask length does not match channel count");
    const std::int64_t hw = model.config.feature_h() * model.config.feature_w();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        if ((*keep)[static_cast<std::size_t>(ch)]) continue;
        double* p = f.data() + (i * c + ch) * hw;
        for (std::int64_t s = 0; s < hw; ++s) p[s] = 0.0;
      }
  }
  const std::vector<double> probs = eval_head_probs(model, f, n);
  std::vector<double> scores(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    scores[static_cast<std::size_t>(i)] = probs[static_cast<std::size_t>(2 * i + 1)];
  return scores;
}

double spoof_score(const Model& model, const Tensor& image) {
  const ModelConfig& cfg = model.config;
  check(image.shape.size() == 3 && image.shape[0] == cfg.input_ch &&
            image.shape[1] == cfg.input_h && image.shape[2] == cfg.input_w,
        "spoof_score: image " + shape_str(image.shape) + " does not match config");
  return eval_spoof_scores(model, image.values, 1)[0];
}

}  // namespace cfd
