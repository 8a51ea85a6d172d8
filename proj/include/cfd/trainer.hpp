#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cfd/config.hpp"
#include "cfd/denoise.hpp"
#include "cfd/metrics.hpp"

namespace cfd {

struct PhaseTiming {
  double data_s = 0.0;
  double importance_s = 0.0;
  double gradient_s = 0.0;
  double eval_s = 0.0;
  double total_s = 0.0;

  std::string to_text() const;
};

struct MetricsRow {
  double ace = 0.0;
  double tdr = 0.0;   // TDR at FDR = 1%
  double eer = 0.0;
  double apcer = 0.0;
  double bpcer = 0.0;
  double acer = 0.0;
};

MetricsRow compute_metrics(const ScoreSet& scores);

// Deterministic run record: regenerating with the same (config, seed) yields
// byte-identical text. Wall-clock timing lives in PhaseTiming, outside the
// report, so reruns stay comparable.
struct RunReport {
  std::vector<double> epoch_losses;
  MetricsRow final_metrics;
  std::vector<double> dis;
  std::vector<std::uint8_t> mask_keep;
  std::string config_echo;

  std::string to_text() const;
};

struct TrainResult {
  Model model;
  ChannelDistance dis;
  DenoiseMask mask;
  RunReport report;
  PhaseTiming timing;
  SynthSplit data;
};

// One full training run per Algorithm-1 semantics: per batch a clean forward,
// channel-importance update, top-k mask selection and suppression (variants
// disable individual pieces), combined loss, backward, Adam step.
TrainResult train_run(const RunConfig& cfg);

// Spoof scores for every sample; keep, when non-null, suppresses channels.
ScoreSet score_dataset(const Model& model, const Dataset& dataset,
                       const std::vector<std::uint8_t>* keep);

// Checkpoint bundle: CFDCKPT1 container with every named parameter plus the
// dis and mask_keep arrays; run config echoed to a sibling .cfg file.
void save_checkpoint_bundle(const std::filesystem::path& ckpt_path,
                            const Model& model, const ChannelDistance& dis,
                            const DenoiseMask& mask, const RunConfig& cfg);

struct CheckpointBundle {
  Model model;
  ChannelDistance dis;
  DenoiseMask mask;
  RunConfig config;
};

CheckpointBundle load_checkpoint_bundle(const std::filesystem::path& ckpt_path);

// CLI entry points. All outputs go through temp-file + rename; a thrown
// exception leaves no partial artifacts behind.
void cmd_train(const std::filesystem::path& config_path,
               const std::filesystem::path& out_dir,
               std::optional<std::uint64_t> seed_override);
void cmd_eval(const std::filesystem::path& ckpt_path,
              const std::filesystem::path& data_path, bool no_mask,
              const std::filesystem::path& out_dir);
void cmd_ablate(const std::filesystem::path& config_path,
                const std::vector<std::uint64_t>& seeds,
                const std::filesystem::path& out_dir);
void cmd_explain(const std::filesystem::path& ckpt_path,
                 const std::filesystem::path& data_path,
                 const std::vector<std::uint32_t>& ids,
                 const std::filesystem::path& out_dir);

}  // namespace cfd
