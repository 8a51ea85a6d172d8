#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cfd/backbone.hpp"
#include "cfd/data.hpp"
#include "cfd/denoise.hpp"

namespace cfd {

// Gradient-weighted class activation map over the generator feature grid.
struct CAMap {
  std::vector<double> values;  // h*w, all >= 0
  std::int64_t h = 0;
  std::int64_t w = 0;
  int target_class = 0;  // 0 = live, 1 = spoof
  std::int64_t z = 0;    // spatial position count used for the channel weights
};

// Differentiates the pre-softmax logit of target_class w.r.t. the generator
// feature map; channel weights are the spatial mean of that gradient and the
// map is the ReLU of the weighted channel sum. normalize rescales the output
// to [0,1] by its maximum without changing the zero set.
CAMap grad_cam(const Model& model, const Tensor& image, int target_class,
               bool normalize = false);

enum class RemovalOrder { kImportanceDescending, kImportanceAscending };

struct RemovalPoint {
  std::int64_t removed = 0;
  double accuracy = 0.0;
};

// Zeroes the first r channels (r = 0..c) of the raw feature map in the given
// importance order and reports classification accuracy at threshold 0.5.
std::vector<RemovalPoint> channel_removal_curve(const Model& model,
                                                const ChannelDistance& dis,
                                                const Dataset& dataset,
                                                RemovalOrder order);

// Max-normalized PGM rendering of a map.
void write_cam_pgm(const std::filesystem::path& path, const CAMap& map);

// Bilinear upsampling for input-resolution overlays.
std::vector<double> upsample_bilinear(const std::vector<double>& values,
                                      std::int64_t h, std::int64_t w,
                                      std::int64_t out_h, std::int64_t out_w);

}  // namespace cfd
