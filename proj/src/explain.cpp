#include "cfd/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cfd {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

CAMap grad_cam(const Model& model, const Tensor& image, int target_class,
               bool normalize) {
  check(target_class == 0 || target_class == 1,
        "grad_cam: target class must be 0 (live) or 1 (spoof), got " +
            std::to_string(target_class));
  const ModelConfig& cfg = model.config;
  check(image.shape.size() == 3 && image.shape[0] == cfg.input_ch &&
            image.shape[1] == cfg.input_h && image.shape[2] == cfg.input_w,
        "grad_cam: image " + shape_str(image.shape) + " does not match config");

  Tape tape;
  BackboneRun run(tape, model, /*trainable=*/true);
  Tensor x({1, cfg.input_ch, cfg.input_h, cfg.input_w}, image.values);
  tape.leaf(x);
  const Tensor f = run.generator(x);
  const Tensor o = run.classifier(run.embedding(f));
  const Tensor logit = tape.select(o, {0, target_class});
  tape.backward(logit);
  const std::vector<double>& gf = tape.node_grad(f.node_id);
  check(!gf.empty(), "grad_cam: feature map received no gradient");

  const std::int64_t c = f.shape[1], h = f.shape[2], w = f.shape[3];
  const std::int64_t z = h * w;
  std::vector<double> alpha(static_cast<std::size_t>(c), 0.0);
  for (std::int64_t k = 0; k < c; ++k) {
    double acc = 0.0;
    for (std::int64_t s = 0; s < z; ++s)
      acc += gf[static_cast<std::size_t>(k * z + s)];
    alpha[static_cast<std::size_t>(k)] = acc / static_cast<double>(z);
  }

  CAMap map;
  map.h = h;
  map.w = w;
  map.target_class = target_class;
  map.z = z;
  map.values.assign(static_cast<std::size_t>(z), 0.0);
  for (std::int64_t s = 0; s < z; ++s) {
    double acc = 0.0;
    for (std::int64_t k = 0; k < c; ++k)
      acc += alpha[static_cast<std::size_t>(k)] *
             f.values[static_cast<std::size_t>(k * z + s)];
    map.values[static_cast<std::size_t>(s)] = acc > 0.0 ? acc : 0.0;
  }
  if (normalize) {
    const double mx = *std::max_element(map.values.begin(), map.values.end());
    if (mx > 0.0)
      for (double& v : map.values) v /= mx;
  }
  return map;
}

std::vector<RemovalPoint> channel_removal_curve(const Model& model,
                                                const ChannelDistance& dis,
                                                const Dataset& dataset,
                                                RemovalOrder order) {
  const std::int64_t c = model.config.feature_channels;
  check(dis.channels() == c, "channel_removal_curve: dis length " +
                                 std::to_string(dis.channels()) +
                                 " != channel count " + std::to_string(c));
  check(dataset.size() > 0, "channel_removal_curve: empty dataset");

  std::vector<std::int64_t> idx(static_cast<std::size_t>(c));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
    const double da = dis.dis[static_cast<std::size_t>(a)];
    const double db = dis.dis[static_cast<std::size_t>(b)];
    return order == RemovalOrder::kImportanceDescending ? da > db : da < db;
  });

  // One generator pass for the whole dataset; each curve point re-runs only
  // the embedding/classifier head on a masked copy.
  const std::int64_t n = dataset.size();
  std::vector<double> x;
  x.reserve(static_cast<std::size_t>(n * dataset.channels * dataset.height *
                                     dataset.width));
  for (const Sample& s : dataset.samples)
    x.insert(x.end(), s.image.values.begin(), s.image.values.end());
  const std::vector<double> f = eval_generator(model, x, n);
  const std::int64_t hw = model.config.feature_h() * model.config.feature_w();

  std::vector<RemovalPoint> curve;
  std::vector<double> masked = f;
  for (std::int64_t r = 0; r <= c; ++r) {
    if (r > 0) {
      const std::int64_t ch = idx[static_cast<std::size_t>(r - 1)];
      for (std::int64_t i = 0; i < n; ++i) {
        double* p = masked.data() + (i * c + ch) * hw;
        std::fill(p, p + hw, 0.0);
      }
    }
    const std::vector<double> probs = eval_head_probs(model, masked, n);
    std::int64_t correct = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      const bool predicted_spoof = probs[static_cast<std::size_t>(2 * i + 1)] >= 0.5;
      const bool is_spoof = dataset.samples[static_cast<std::size_t>(i)].attack != 0;
      if (predicted_spoof == is_spoof) ++correct;
    }
    curve.push_back({r, static_cast<double>(correct) / static_cast<double>(n)});
  }
  return curve;
}

void write_cam_pgm(const std::filesystem::path& path, const CAMap& map) {
  std::vector<double> scaled = map.values;
  const double mx = scaled.empty()
                        ? 0.0
                        : *std::max_element(scaled.begin(), scaled.end());
  if (mx > 0.0)
    for (double& v : scaled) v /= mx;
  write_pgm(path, scaled, map.h, map.w);
}

std::vector<double> upsample_bilinear(const std::vector<double>& values,
                                      std::int64_t h, std::int64_t w,
                                      std::int64_t out_h, std::int64_t out_w) {
  check(static_cast<std::int64_t>(values.size()) == h * w,
        "upsample_bilinear: value count does not match dimensions");
  std::vector<double> out(static_cast<std::size_t>(out_h * out_w), 0.0);
  const double sy = out_h > 1 ? static_cast<double>(h - 1) / static_cast<double>(out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(w - 1) / static_cast<double>(out_w - 1) : 0.0;
  for (std::int64_t y = 0; y < out_h; ++y)
    for (std::int64_t x = 0; x < out_w; ++x) {
      const double fy = static_cast<double>(y) * sy;
      const double fx = static_cast<double>(x) * sx;
      const std::int64_t y0 = std::min<std::int64_t>(static_cast<std::int64_t>(fy), h - 1);
      const std::int64_t x0 = std::min<std::int64_t>(static_cast<std::int64_t>(fx), w - 1);
      const std::int64_t y1 = std::min(y0 + 1, h - 1);
      const std::int64_t x1 = std::min(x0 + 1, w - 1);
      const double ay = fy - static_cast<double>(y0);
      const double ax = fx - static_cast<double>(x0);
      out[static_cast<std::size_t>(y * out_w + x)] =
          (1 - ay) * ((1 - ax) * values[static_cast<std::size_t>(y0 * w + x0)] +
                      ax * values[static_cast<std::size_t>(y0 * w + x1)]) +
          ay * ((1 - ax) * values[static_cast<std::size_t>(y1 * w + x0)] +
                ax * values[static_cast<std::size_t>(y1 * w + x1)]);
    }
  return out;
}

}  // namespace cfd
