#include "cfd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "cfd/checkpoint.hpp"

namespace cfd {

namespace {

struct SplitScores {
  std::vector<double> live;   // sorted ascending
  std::vector<double> spoof;  // sorted ascending
};

SplitScores split_and_validate(const ScoreSet& scores) {
  if (scores.entries.empty())
    throw std::invalid_argument("metrics: empty score set");
  SplitScores s;
  for (const ScoreEntry& e : scores.entries) {
    if (std::isnan(e.score))
      throw std::invalid_argument("metrics: NaN score rejected");
    (e.is_spoof ? s.spoof : s.live).push_back(e.score);
  }
  if (s.live.empty() || s.spoof.empty())
    throw std::invalid_argument(
        "metrics: rate metrics need at least one live and one spoof entry");
  std::sort(s.live.begin(), s.live.end());
  std::sort(s.spoof.begin(), s.spoof.end());
  return s;
}

// Fraction of v with value >= t, v sorted ascending.
double frac_ge(const std::vector<double>& v, double t) {
  const auto it = std::lower_bound(v.begin(), v.end(), t);
  return static_cast<double>(v.end() - it) / static_cast<double>(v.size());
}

std::vector<double> threshold_sweep(const SplitScores& s) {
  std::vector<double> all;
  all.reserve(s.live.size() + s.spoof.size());
  all.insert(all.end(), s.live.begin(), s.live.end());
  all.insert(all.end(), s.spoof.begin(), s.spoof.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  std::vector<double> ts;
  ts.reserve(all.size() + 2);
  ts.push_back(all.front() - 1.0);  // everything classified spoof
  ts.insert(ts.end(), all.begin(), all.end());
  ts.push_back(all.back() + 1.0);   // everything classified live
  return ts;
}

}  // namespace

std::vector<RocPoint> roc(const ScoreSet& scores) {
  const SplitScores s = split_and_validate(scores);
  std::vector<RocPoint> points;
  for (double t : threshold_sweep(s))
    points.push_back({t, frac_ge(s.live, t), frac_ge(s.spoof, t)});
  return points;
}

double tdr_at_fdr(const ScoreSet& scores, double q) {
  double best = 0.0;
  for (const RocPoint& p : roc(scores))
    if (p.fdr <= q) best = std::max(best, p.tdr);
  return best;
}

double eer(const ScoreSet& scores) {
  const SplitScores s = split_and_validate(scores);
  const std::vector<double> ts = threshold_sweep(s);
  // APCER rises and BPCER falls with t, so their difference crosses zero
  // exactly once along the sweep.
  double prev_a = 0.0, prev_b = 0.0, prev_diff = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double a = 1.0 - frac_ge(s.spoof, ts[i]);  // spoof scored < t
    const double b = frac_ge(s.live, ts[i]);         // live scored >= t
    const double diff = a - b;
    if (diff == 0.0) return a;
    if (diff > 0.0) {
      if (i == 0) return (a + b) / 2.0;
      const double step = (prev_b - prev_a) / ((a - prev_a) - (b - prev_b));
      return prev_a + step * (a - prev_a);
    }
    prev_a = a;
    prev_b = b;
    prev_diff = diff;
  }
  (void)prev_diff;
  // unreachable: the sweep ends with everything classified live (diff = +1)
  return (prev_a + prev_b) / 2.0;
}

ThresholdErrors fixed_threshold_errors(const ScoreSet& scores, double t) {
  const SplitScores s = split_and_validate(scores);
  ThresholdErrors e;
  e.apcer = 1.0 - frac_ge(s.spoof, t);
  e.bpcer = frac_ge(s.live, t);
  e.acer = (e.apcer + e.bpcer) / 2.0;
  e.ace = e.acer;
  return e;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

void write_scores_csv(const std::filesystem::path& path, const ScoreSet& scores,
                      const std::vector<std::uint32_t>& ids) {
  if (ids.size() != scores.entries.size())
    throw std::invalid_argument("write_scores_csv: id count does not match entries");
  std::ostringstream os;
  os << "id,score,is_spoof\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < ids.size(); ++i)
    os << ids[i] << "," << scores.entries[i].score << ","
       << (scores.entries[i].is_spoof ? 1 : 0) << "\n";
  write_file_atomic(path, os.str());
}

ScoreSet read_scores_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "id,score,is_spoof")
    throw std::runtime_error(path.string() +
                             ":1: expected header 'id,score,is_spoof'");
  ScoreSet out;
  std::int64_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected 'id,score,is_spoof'");
    ScoreEntry e;
    try {
      e.score = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
      e.is_spoof = std::stoi(line.substr(c2 + 1)) != 0;
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": malformed row '" + line + "'");
    }
    out.entries.push_back(e);
  }
  return out;
}

void write_roc_csv(const std::filesystem::path& path,
                   const std::vector<RocPoint>& points) {
  std::ostringstream os;
  os << "threshold,fdr,tdr\n";
  os << std::setprecision(17);
  for (const RocPoint& p : points)
    os << p.threshold << "," << p.fdr << "," << p.tdr << "\n";
  write_file_atomic(path, os.str());
}

}  // namespace cfd
