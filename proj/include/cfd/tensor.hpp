#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cfd {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of binary64 reals. A tensor participates in
// differentiation once it is placed on a Tape (node_id >= 0); node ids are
// only meaningful for the tape that issued them.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;      // filled by Tape::backward for leaves
  std::int64_t node_id = -1;
  std::uint64_t tape_id = 0;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v, bool rg = false);

  static Tensor zeros(Shape s, bool rg = false);
  static Tensor full(Shape s, double value, bool rg = false);

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
  bool on_tape() const { return node_id >= 0; }

  double& at4(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d);
  double at4(std::int64_t a, std::int64_t b, std::int64_t c,
             std::int64_t d) const;
};

enum class OpKind {
  kLeaf,
  kAdd,
  kMul,
  kScale,
  kSum,
  kSelect,
  kRelu,
  kSoftmax,
  kConv2d,
  kDense,
  kAvgPool,
  kChannelMask,
  kCrossEntropy,
  kTripletHinge,
};

struct TapeNode {
  OpKind op = OpKind::kLeaf;
  std::vector<std::int64_t> inputs;
  Shape shape;
  std::vector<double> values;    // saved activation
  std::vector<std::int64_t> ictx;
  std::vector<double> ctx;
  bool needs_grad = false;         // true if any input (or the leaf) needs grad
  Tensor* owner = nullptr;       // leaf back-reference, may be null
};

// One index triple for the triplet hinge loss.
struct Triple {
  std::int64_t anchor = 0;
  std::int64_t positive = 0;
  std::int64_t negative = 0;
};

// Define-by-run reverse-mode tape. Built fresh for every forward pass; a tape
// and its tensors are confined to one thread. Leaf tensors passed to leaf()
// must outlive the tape's backward sweep.
class Tape {
 public:
  Tape();

  // Registers t as a leaf and returns its node id. Call once per tensor per
  // tape; re-leafing creates a distinct node.
  std::int64_t leaf(Tensor& t);

  Tensor add(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double c);
  Tensor sum(const Tensor& a);
  Tensor select(const Tensor& a, const std::vector<std::int64_t>& index);
  Tensor relu(const Tensor& a);
  // Row-wise softmax over a [N,K] tensor, max-subtracted. Rejects NaN input.
  Tensor softmax(const Tensor& a);
  // Cross-correlation with zero padding; x [N,C,H,W], w [Co,C,kh,kw], b [Co].
  Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                std::int64_t stride, std::int64_t pad);
  // Affine map x*w^T + b; x [N,D], w [K,D], b [K].
  Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);
  // Per-channel spatial mean; [N,C,H,W] -> [N,C].
  Tensor global_avgpool(const Tensor& x);
  // Zeroes channels with keep[c]==0; kept channels pass through unchanged and
  // suppressed channels contribute no gradient.
  Tensor channel_mask(const Tensor& f, const std::vector<std::uint8_t>& keep);
  // Mean over the batch of -log softmax(logits)[label]; labels in {0..K-1}.
  Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
  // Mean over triples of max(||e_a-e_p||^2 - ||e_a-e_n||^2 + alpha, 0).
  // An empty triple list yields a constant zero with zero gradient.
  Tensor triplet_hinge(const Tensor& emb, const std::vector<Triple>& triples,
                       double alpha);

  // Reverse sweep from a scalar loss. Populates grad on every requires_grad
  // leaf registered via leaf(). Deterministic; may be called repeatedly.
  void backward(const Tensor& loss);

  // Gradient buffer of any node after backward (empty if the node was not on
  // the differentiated path).
  const std::vector<double>& node_grad(std::int64_t node) const;

  std::int64_t size() const { return static_cast<std::int64_t>(nodes_.size()); }
  std::uint64_t id() const { return id_; }
  const TapeNode& node(std::int64_t i) const;

 private:
  std::int64_t push(TapeNode n);
  Tensor wrap(std::int64_t id) const;
  std::int64_t require_on_tape(const Tensor& t, const char* what) const;

  std::uint64_t id_;
  std::vector<TapeNode> nodes_;
  std::vector<std::vector<double>> grads_;
};

// Analytic gradient probe: value and gradient of a scalar function at a point.
struct GradProbe {
  double value = 0.0;
  std::vector<double> grad;
};

// Max over coordinates of |analytic-numeric| / max(1e-8, |analytic|+|numeric|)
// using central differences with step h.
double finite_diff_check(
    const std::function<GradProbe(const std::vector<double>&)>& f,
    const std::vector<double>& point, double h = 1e-5);

// Adam with bias correction. Defaults follow the training setup (lr 1e-4).
struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::int64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

AdamState make_adam(const std::vector<Tensor*>& params, AdamConfig cfg = {});

// One update step. Parameters with an empty grad are treated as zero-gradient.
void adam_step(const std::vector<Tensor*>& params, AdamState& state);

}  // namespace cfd
