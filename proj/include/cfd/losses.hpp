#pragma once

#include <vector>

#include "cfd/tensor.hpp"

namespace cfd {

// Attack labels: 0 = live, 1..n = spoof material ids. The binary liveness
// label is derived (live iff 0).
int liveness_label(int attack);
std::vector<int> liveness_labels(const std::vector<int>& attack);

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double margin = 1.0;

  void validate() const;
};

// Mean over the batch of -log softmax(o)[y].
Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& y);

// Batch-hard mining over squared Euclidean distances: for every anchor with
// at least one same-class partner and one other-class sample, positive is the
// farthest same-class index and negative the closest other-class index. Ties
// break toward the lower index. Anchors without a valid positive or negative
// are skipped; a single-class batch yields an empty list.
std::vector<Triple> mine_triplets(const Tensor& emb, const std::vector<int>& attack);

// Mean over mined triples of max(||e_a-e_p||^2 - ||e_a-e_n||^2 + alpha, 0);
// zero (with zero gradient) when no triple can be mined.
Tensor pa_adaptation(Tape& tape, const Tensor& emb, const std::vector<int>& attack,
                     double alpha);

// lambda1 * L_c(o,y) + lambda2 * L_padp(e'',a) + lambda3 * L_c(o'',y)
Tensor combined_loss(Tape& tape, const Tensor& o, const Tensor& o2,
                     const Tensor& e2, const std::vector<int>& y,
                     const std::vector<int>& attack, const LossWeights& w);

}  // namespace cfd
