#pragma once

#include <cstdint>
#include <vector>

#include "cfd/backbone.hpp"
#include "cfd/tensor.hpp"

namespace cfd {

// Cumulative per-channel importance. Entry i accumulates, batch by batch, the
// mean absolute change of the live probability when channel i is zeroed.
struct ChannelDistance {
  std::vector<double> dis;
  std::int64_t batches_seen = 0;

  ChannelDistance() = default;
  explicit ChannelDistance(std::int64_t channels)
      : dis(static_cast<std::size_t>(channels), 0.0) {}

  std::int64_t channels() const { return static_cast<std::int64_t>(dis.size()); }
};

// Boolean keep-mask with exactly k channels kept.
struct DenoiseMask {
  std::vector<std::uint8_t> keep;
  std::int64_t k = 0;

  std::int64_t channels() const { return static_cast<std::int64_t>(keep.size()); }
  static DenoiseMask all_kept(std::int64_t channels);
};

// Copy of f with channel `channel` zeroed across the batch and spatial grid.
Tensor ablate_channel(const Tensor& f, std::int64_t channel);

// One Eq.-8 accumulation step: for every channel, re-run the embedding and
// classifier on the ablated feature map and add the batch-mean |a - a_i| to
// dis. Gradient-free; the per-channel evaluations run in parallel and their
// contributions are reduced in ascending channel order. decay < 1 turns on
// exponential forgetting of earlier batches (off by default).
void importance_update(const Model& model, const Tensor& f, ChannelDistance& dis,
                       double decay = 1.0);

// keep[i] true iff dis[i] is among the k largest; ties go to the lower index.
DenoiseMask select_topk(const ChannelDistance& dis, std::int64_t k);

// keep[i] true iff dis[i] is among the k smallest; ties go to the lower
// index. Used by the channel-wise feature regularization variant.
DenoiseMask select_bottomk(const ChannelDistance& dis, std::int64_t k);

// On-tape suppression: kept channels pass through, suppressed channels are
// exactly zero and contribute zero gradient.
Tensor suppress_channels(Tape& tape, const Tensor& f, const DenoiseMask& mask);

struct DenoisedPaths {
  Tensor f;   // shared generator output
  Tensor e;   // clean embedding
  Tensor o;   // clean logits
  Tensor f2;  // suppressed feature map f''
  Tensor e2;  // suppressed-path embedding e''
  Tensor o2;  // suppressed-path logits o''
};

// Clean and suppressed paths over one shared generator forward.
DenoisedPaths denoised_logits(Tape& tape, BackboneRun& run, const Tensor& x,
                              const DenoiseMask& mask);

}  // namespace cfd
