#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cfd {

struct ScoreEntry {
  double score = 0.0;  // spoof probability in [0,1]
  bool is_spoof = false;
};

struct ScoreSet {
  std::vector<ScoreEntry> entries;
};

struct RocPoint {
  double threshold = 0.0;
  double fdr = 0.0;  // fraction of live classified spoof (score >= threshold)
  double tdr = 0.0;  // fraction of spoof classified spoof
};

// Thresholds are the sorted unique scores plus one sentinel below the minimum
// and one above the maximum; a sample is classified spoof iff score >=
// threshold, so both rates are nonincreasing along the sweep.
std::vector<RocPoint> roc(const ScoreSet& scores);

// Maximum TDR over ROC points with FDR <= q.
double tdr_at_fdr(const ScoreSet& scores, double q = 0.01);

// Operating point where APCER(t) and BPCER(t) coincide, with linear
// interpolation between the bracketing thresholds when the step curves cross
// between points.
double eer(const ScoreSet& scores);

struct ThresholdErrors {
  double apcer = 0.0;  // spoof with score < t
  double bpcer = 0.0;  // live with score >= t
  double acer = 0.0;   // (apcer + bpcer) / 2, exact
  double ace = 0.0;    // acer at the decision threshold
};

ThresholdErrors fixed_threshold_errors(const ScoreSet& scores, double t = 0.5);

// CSV surfaces: scores (id,score,is_spoof) and ROC points (threshold,fdr,tdr).
void write_scores_csv(const std::filesystem::path& path, const ScoreSet& scores,
                      const std::vector<std::uint32_t>& ids);
ScoreSet read_scores_csv(const std::filesystem::path& path);
void write_roc_csv(const std::filesystem::path& path,
                   const std::vector<RocPoint>& points);

}  // namespace cfd
