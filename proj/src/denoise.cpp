#include "cfd/denoise.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cfd {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

DenoiseMask DenoiseMask::all_kept(std::int64_t channels) {
  DenoiseMask m;
  m.keep.assign(static_cast<std::size_t>(channels), 1);
  m.k = channels;
  return m;
}

Tensor ablate_channel(const Tensor& f, std::int64_t channel) {
  check(f.shape.size() == 4, "ablate_channel: feature map must be [N,c,h,w], got " +
                                 shape_str(f.shape));
  const std::int64_t c = f.shape[1];
  check(channel >= 0 && channel < c,
        "ablate_channel: channel " + std::to_string(channel) + " outside [0," +
            std::to_string(c) + ")");
  Tensor out = f;
  out.node_id = -1;
  out.tape_id = 0;
  out.grad.clear();
  const std::int64_t n = f.shape[0];
  const std::int64_t hw = f.shape[2] * f.shape[3];
  for (std::int64_t b = 0; b < n; ++b) {
    double* p = out.values.data() + (b * c + channel) * hw;
    std::fill(p, p + hw, 0.0);
  }
  return out;
}

void importance_update(const Model& model, const Tensor& f, ChannelDistance& dis,
                       double decay) {
  check(f.shape.size() == 4, "importance_update: feature map must be [N,c,h,w]");
  const std::int64_t n = f.shape[0];
  const std::int64_t c = f.shape[1];
  check(c == model.config.feature_channels,
        "importance_update: feature map carries " + std::to_string(c) +
            " channels, model expects " +
            std::to_string(model.config.feature_channels));
  check(dis.channels() == c,
        "importance_update: dis has " + std::to_string(dis.channels()) +
            " entries for " + std::to_string(c) + " channels");
  check(f.shape[2] == model.config.feature_h() &&
            f.shape[3] == model.config.feature_w(),
        "importance_update: feature grid does not match model config");

  // Clean-path live probability per sample.
  const std::vector<double> clean = eval_head_probs(model, f.values, n);

  const std::int64_t hw = f.shape[2] * f.shape[3];
  std::vector<double> increment(static_cast<std::size_t>(c), 0.0);

  // The c ablated evaluations are independent read-only forwards.
#pragma omp parallel for schedule(static)
  for (std::int64_t ch = 0; ch < c; ++ch) {
    std::vector<double> ablated = f.values;
    for (std::int64_t b = 0; b < n; ++b) {
      double* p = ablated.data() + (b * c + ch) * hw;
      std::fill(p, p + hw, 0.0);
    }
    const std::vector<double> probs = eval_head_probs(model, ablated, n);
    double acc = 0.0;
    for (std::int64_t b = 0; b < n; ++b)
      acc += std::abs(clean[static_cast<std::size_t>(2 * b)] -
                      probs[static_cast<std::size_t>(2 * b)]);
    increment[static_cast<std::size_t>(ch)] = acc / static_cast<double>(n);
  }

  // Reduce in ascending channel order.
  for (std::int64_t ch = 0; ch < c; ++ch)
    dis.dis[static_cast<std::size_t>(ch)] =
        decay * dis.dis[static_cast<std::size_t>(ch)] +
        increment[static_cast<std::size_t>(ch)];
  dis.batches_seen += 1;
}

namespace {

DenoiseMask select_by(const ChannelDistance& dis, std::int64_t k, bool largest) {
  const std::int64_t c = dis.channels();
  if (k < 1 || k > c)
    throw std::invalid_argument("select_topk: k=" + std::to_string(k) +
                                " outside [1," + std::to_string(c) + "]");
  std::vector<std::int64_t> order(static_cast<std::size_t>(c));
  std::iota(order.begin(), order.end(), 0);
  // stable sort keeps lower channel indices first on ties
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    const double da = dis.dis[static_cast<std::size_t>(a)];
    const double db = dis.dis[static_cast<std::size_t>(b)];
    return largest ? da > db : da < db;
  });
  DenoiseMask m;
  m.k = k;
  m.keep.assign(static_cast<std::size_t>(c), 0);
  for (std::int64_t i = 0; i < k; ++i)
    m.keep[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  return m;
}

}  // namespace

DenoiseMask select_topk(const ChannelDistance& dis, std::int64_t k) {
  return select_by(dis, k, true);
}

DenoiseMask select_bottomk(const ChannelDistance& dis, std::int64_t k) {
  return select_by(dis, k, false);
}

Tensor suppress_channels(Tape& tape, const Tensor& f, const DenoiseMask& mask) {
  check(f.shape.size() == 4, "suppress_channels: feature map must be [N,c,h,w]");
  check(mask.channels() == f.shape[1],
        "suppress_channels: mask length " + std::to_string(mask.channels()) +
            " != channel count " + std::to_string(f.shape[1]));
  return tape.channel_mask(f, mask.keep);
}

DenoisedPaths denoised_logits(Tape& tape, BackboneRun& run, const Tensor& x,
                              const DenoiseMask& mask) {
  DenoisedPaths p;
  p.f = run.generator(x);
  p.e = run.embedding(p.f);
  p.o = run.classifier(p.e);
  p.f2 = suppress_channels(tape, p.f, mask);
  p.e2 = run.embedding(p.f2);
  p.o2 = run.classifier(p.e2);
  return p;
}

}  // namespace cfd
