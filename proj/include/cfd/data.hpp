#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cfd/rng.hpp"
#include "cfd/tensor.hpp"

namespace cfd {

struct Sample {
  Tensor image;  // [Cin,H,W], values in [0,1] before augmentation
  int attack = 0;
  std::uint32_t id = 0;
};

struct Dataset {
  std::int64_t channels = 1;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<Sample> samples;

  std::int64_t size() const { return static_cast<std::int64_t>(samples.size()); }
  std::vector<int> attack_labels() const;
};

// Synthetic fingerprint-like corpus: live samples are oriented sinusoidal
// ridge gratings; material m overlays a fixed per-material texture signature;
// every image receives class-ambiguous distractor patches drawn from a pool
// shared across classes. The test split holds out the last material id.
struct SynthConfig {
  std::int64_t n_materials = 4;  // spoof material ids 1..n
  std::int64_t image_size = 32;  // H = W
  double ridge_freq_min = 0.09;  // cycles per pixel
  double ridge_freq_max = 0.15;
  double material_strength = 0.35;
  double distractor_strength = 0.45;
  double noise_sigma = 0.03;
  std::int64_t train_per_class = 48;
  std::int64_t test_per_class = 64;
  std::uint64_t seed = 1;
};

struct SynthSplit {
  Dataset train;
  Dataset test;
  std::vector<int> train_materials;
  std::vector<int> test_materials;
};

SynthSplit synth_generate(const SynthConfig& cfg);

struct AugmentConfig {
  std::int64_t cutout_count = 10;
  double cutout_side_ratio = 96.0 / 224.0;  // mask side as a fraction of min(H,W)
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  double rotation_degrees = 15.0;
  bool nearest_rotation = false;
};

std::int64_t cutout_side(const AugmentConfig& cfg, std::int64_t h, std::int64_t w);

// Places cfg.cutout_count square zero-masks at uniformly random centers,
// clipped at the borders.
void cutout(Tensor& image, const AugmentConfig& cfg, Rng& rng);

void hflip(Tensor& image);
void vflip(Tensor& image);

enum class Interp { kBilinear, kNearest };

// Rotation about the image center by inverse-map sampling, zero fill outside.
Tensor rotate(const Tensor& image, double degrees, Interp interp);

// Bernoulli flips followed by a uniform random rotation in
// [-rotation_degrees, +rotation_degrees].
Tensor flip_rotate(const Tensor& image, const AugmentConfig& cfg, Rng& rng);

// Full train-time pipeline: flips, rotation, cut-out.
Tensor augment(const Tensor& image, const AugmentConfig& cfg, Rng& rng);

// Class-balanced index batches covering every sample at least once per epoch.
// Every batch holds at least two samples of one attack class and one of
// another so triplet mining is always possible.
std::vector<std::vector<std::int64_t>> balanced_batches(const Dataset& dataset,
                                                        std::int64_t batch_size,
                                                        Rng& rng);

// Round-trip-exact dataset container (CFDCKPT1 arrays images/attack/id).
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

// Accepts either a container file or a directory of 8-bit grayscale PGM files
// named <id>.pgm with a labels.csv sidecar (header "id,attack").
Dataset load_dataset(const std::filesystem::path& path);

// P5 PGM, maxval <= 255; values scaled to [0,1].
std::vector<double> read_pgm(const std::filesystem::path& path, std::int64_t& h,
                             std::int64_t& w);
void write_pgm(const std::filesystem::path& path, const std::vector<double>& values,
               std::int64_t h, std::int64_t w);

}  // namespace cfd
