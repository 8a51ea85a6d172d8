#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cfd/backbone.hpp"
#include "cfd/data.hpp"
#include "cfd/losses.hpp"

namespace cfd {

enum class Variant {
  kBaseline,       // cross-entropy only, no suppression
  kPaOnly,         // + PA-Adaptation on the clean embedding
  kCfdOnly,        // + denoising, no PA-Adaptation
  kCfdRegularize,  // inverted mask: keep the k least important channels
  kFull,           // denoising + PA-Adaptation
};

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);
bool variant_uses_denoise(Variant v);

// Everything one run needs, parsed from a flat `key = value` file with `#`
// comments. Unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  SynthConfig synth;
  AugmentConfig augment;
  LossWeights loss;
  std::int64_t k = 4;
  std::int64_t epochs = 20;
  std::int64_t batch_size = 16;
  double lr = 1e-4;
  double dis_decay = 1.0;
  std::uint64_t seed = 1;
  Variant variant = Variant::kFull;

  void validate() const;
};

RunConfig parse_run_config(const std::string& text, const std::string& origin);
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical echo; parse_run_config(serialize_run_config(c)) reproduces c.
std::string serialize_run_config(const RunConfig& cfg);

}  // namespace cfd
