#include "cfd/losses.hpp"

#include <limits>
#include <stdexcept>
#include <string>

namespace cfd {

int liveness_label(int attack) {
  if (attack < 0) throw std::invalid_argument("attack label must be nonnegative");
  return attack == 0 ? 0 : 1;
}

std::vector<int> liveness_labels(const std::vector<int>& attack) {
  std::vector<int> y;
  y.reserve(attack.size());
  for (int a : attack) y.push_back(liveness_label(a));
  return y;
}

void LossWeights::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
    throw std::invalid_argument("loss weights must be nonnegative");
  if (lambda1 == 0 && lambda2 == 0 && lambda3 == 0)
    throw std::invalid_argument("at least one loss weight must be positive");
  if (!(margin > 0)) throw std::invalid_argument("margin must be positive");
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& y) {
  return tape.cross_entropy(logits, y);
}

std::vector<Triple> mine_triplets(const Tensor& emb, const std::vector<int>& attack) {
  if (emb.shape.size() != 2)
    throw std::invalid_argument("mine_triplets: embeddings must be [N,D], got " +
                                shape_str(emb.shape));
  const std::int64_t n = emb.shape[0];
  const std::int64_t dim = emb.shape[1];
  if (static_cast<std::int64_t>(attack.size()) != n)
    throw std::invalid_argument("mine_triplets: " + std::to_string(attack.size()) +
                                " labels for " + std::to_string(n) + " embeddings");

  auto sqdist = [&](std::int64_t i, std::int64_t j) {
    const double* a = emb.values.data() + i * dim;
    const double* b = emb.values.data() + j * dim;
    double acc = 0.0;
    for (std::int64_t k = 0; k < dim; ++k) {
      const double d = a[k] - b[k];
      acc += d * d;
    }
    return acc;
  };

  std::vector<Triple> out;
  for (std::int64_t a = 0; a < n; ++a) {
    std::int64_t best_p = -1, best_n = -1;
    double worst_pos = -1.0;
    double best_neg = std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const double d = sqdist(a, j);
      if (attack[static_cast<std::size_t>(j)] == attack[static_cast<std::size_t>(a)]) {
        if (d > worst_pos) {  // strict: ties keep the lower index
          worst_pos = d;
          best_p = j;
        }
      } else {
        if (d < best_neg) {
          best_neg = d;
          best_n = j;
        }
      }
    }
    if (best_p >= 0 && best_n >= 0) out.push_back({a, best_p, best_n});
  }
  return out;
}

Tensor pa_adaptation(Tape& tape, const Tensor& emb, const std::vector<int>& attack,
                     double alpha) {
  return tape.triplet_hinge(emb, mine_triplets(emb, attack), alpha);
}

Tensor combined_loss(Tape& tape, const Tensor& o, const Tensor& o2,
                     const Tensor& e2, const std::vector<int>& y,
                     const std::vector<int>& attack, const LossWeights& w) {
  w.validate();
  const Tensor clean = tape.scale(cross_entropy(tape, o, y), w.lambda1);
  const Tensor padp = tape.scale(pa_adaptation(tape, e2, attack, w.margin), w.lambda2);
  const Tensor denoised = tape.scale(cross_entropy(tape, o2, y), w.lambda3);
  return tape.add(tape.add(clean, padp), denoised);
}

}  // namespace cfd
