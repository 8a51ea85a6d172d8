#include "cfd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cfd/kernels.hpp"

namespace cfd {

namespace {

std::atomic<std::uint64_t> g_tape_counter{1};

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

kernels::Conv2dDims conv_dims(const Shape& xs, const Shape& ws,
                              std::int64_t stride, std::int64_t pad) {
  kernels::Conv2dDims d;
  d.n = xs[0];
  d.cin = xs[1];
  d.h = xs[2];
  d.w = xs[3];
  d.cout = ws[0];
  d.kh = ws[2];
  d.kw = ws[3];
  d.stride = stride;
  d.pad = pad;
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  return d;
}

}  // namespace

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> v, bool rg)
    : shape(std::move(s)), values(std::move(v)), requires_grad(rg) {
  for (auto e : shape)
    check(e > 0, "tensor: nonpositive extent in shape " + shape_str(shape));
  check(numel(shape) == static_cast<std::int64_t>(values.size()),
        "tensor: shape " + shape_str(shape) + " does not match " +
            std::to_string(values.size()) + " values");
}

Tensor Tensor::zeros(Shape s, bool rg) {
  const auto n = numel(s);
  return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0), rg);
}

Tensor Tensor::full(Shape s, double value, bool rg) {
  const auto n = numel(s);
  return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), value), rg);
}

double& Tensor::at4(std::int64_t a, std::int64_t b, std::int64_t c,
                    std::int64_t d) {
  return values[static_cast<std::size_t>(
      ((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
}

double Tensor::at4(std::int64_t a, std::int64_t b, std::int64_t c,
                   std::int64_t d) const {
  return values[static_cast<std::size_t>(
      ((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) {}

const TapeNode& Tape::node(std::int64_t i) const {
  check(i >= 0 && i < size(), "tape: node id out of range");
  return nodes_[static_cast<std::size_t>(i)];
}

std::int64_t Tape::push(TapeNode n) {
  nodes_.push_back(std::move(n));
  return static_cast<std::int64_t>(nodes_.size()) - 1;
}

Tensor Tape::wrap(std::int64_t id) const {
  const TapeNode& n = nodes_[static_cast<std::size_t>(id)];
  Tensor t(n.shape, n.values, false);
  t.node_id = id;
  t.tape_id = id_;
  return t;
}

std::int64_t Tape::require_on_tape(const Tensor& t, const char* what) const {
  check(t.node_id >= 0, std::string(what) + ": tensor is not on the tape (call leaf() first)");
  check(t.tape_id == id_, std::string(what) + ": tensor belongs to a different tape");
  check(t.node_id < size(), std::string(what) + ": stale node id");
  return t.node_id;
}

std::int64_t Tape::leaf(Tensor& t) {
  TapeNode n;
  n.op = OpKind::kLeaf;
  n.shape = t.shape;
  n.values = t.values;
  n.needs_grad = t.requires_grad;
  n.owner = &t;
  const auto id = push(std::move(n));
  t.node_id = id;
  t.tape_id = id_;
  return id;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  const auto ia = require_on_tape(a, "add");
  const auto ib = require_on_tape(b, "add");
  check(a.shape == b.shape, "add: shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
  TapeNode n;
  n.op = OpKind::kAdd;
  n.inputs = {ia, ib};
  n.shape = a.shape;
  n.values.resize(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i)
    n.values[i] = a.values[i] + b.values[i];
  n.needs_grad = nodes_[ia].needs_grad || nodes_[ib].needs_grad;
  return wrap(push(std::move(n)));
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  const auto ia = require_on_tape(a, "mul");
  const auto ib = require_on_tape(b, "mul");
  check(a.shape == b.shape, "mul: shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
  TapeNode n;
  n.op = OpKind::kMul;
  n.inputs = {ia, ib};
  n.shape = a.shape;
  n.values.resize(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i)
    n.values[i] = a.values[i] * b.values[i];
  n.needs_grad = nodes_[ia].needs_grad || nodes_[ib].needs_grad;
  return wrap(push(std::move(n)));
}

Tensor Tape::scale(const Tensor& a, double c) {
  const auto ia = require_on_tape(a, "scale");
  TapeNode n;
  n.op = OpKind::kScale;
  n.inputs = {ia};
  n.shape = a.shape;
  n.ctx = {c};
  n.values.resize(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) n.values[i] = a.values[i] * c;
  n.needs_grad = nodes_[ia].needs_grad;
  return wrap(push(std::move(n)));
}

Tensor Tape::sum(const Tensor& a) {
  const auto ia = require_on_tape(a, "sum");
  double acc = 0.0;
  for (double v : a.values) acc += v;
  TapeNode n;
  n.op = OpKind::kSum;
  n.inputs = {ia};
  n.shape = {1};
  n.values = {acc};
  n.needs_grad = nodes_[ia].needs_grad;
  return wrap(push(std::move(n)));
}

Tensor Tape::select(const Tensor& a, const std::vector<std::int64_t>& index) {
  const auto ia = require_on_tape(a, "select");
  check(index.size() == a.shape.size(),
        "select: index rank " + std::to_string(index.size()) +
            " != tensor rank " + std::to_string(a.shape.size()));
  std::int64_t flat = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    check(index[i] >= 0 && index[i] < a.shape[i],
          "select: index out of range at axis " + std::to_string(i));
    flat = flat * a.shape[i] + index[i];
  }
  TapeNode n;
  n.op = OpKind::kSelect;
  n.inputs = {ia};
  n.shape = {1};
  n.ictx = {flat};
  n.values = {a.values[static_cast<std::size_t>(flat)]};
  n.needs_grad = nodes_[ia].needs_grad;
  return wrap(push(std::move(n)));
}

Tensor Tape::relu(const Tensor& a) {
  const auto ia = require_on_tape(a, "relu");
  TapeNode n;
  n.op = OpKind::kRelu;
  n.inputs = {ia};
  n.shape = a.shape;
  n.values.resize(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i)
    n.values[i] = a.values[i] > 0.0 ? a.values[i] : 0.0;
  n.needs_grad = nodes_[ia].needs_grad;
  return wrap(push(std::move(n)));
}

Tensor Tape::softmax(const Tensor& a) {
  const auto ia = require_on_tape(a, "softmax");
  check(a.shape.size() == 2, "softmax: expected rank-2 input, got " + shape_str(a.shape));
  for (double v : a.values)
    check(!std::isnan(v), "softmax: NaN input rejected");
  const std::int64_t rows = a.shape[0];
  const std::int64_t cols = a.shape[1];
  TapeNode n;
  n.op = OpKind::kSoftmax;
  n.inputs = {ia};
  n.shape = a.shape;
  n.values.resize(a.values.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = a.values.data() + r * cols;
    double* out = n.values.data() + r * cols;
    double mx = in[0];
    for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    double denom = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) {
      out[c] = std::exp(in[c] - mx);
      denom += out[c];
    }
    for (std::int64_t c = 0; c < cols; ++c) out[c] /= denom;
  }
  n.needs_grad = nodes_[ia].needs_grad;
  return wrap(push(std::move(n)));
}

Tensor Tape::conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                    std::int64_t stride, std::int64_t pad) {
  const auto ix = require_on_tape(x, "conv2d");
  const auto iw = require_on_tape(w, "conv2d");
  const auto ib = require_on_tape(b, "conv2d");
  check(x.shape.size() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(x.shape));
  check(w.shape.size() == 4, "conv2d: kernel must be [Co,C,kh,kw], got " + shape_str(w.shape));
  check(b.shape.size() == 1 && b.shape[0] == w.shape[0],
        "conv2d: bias shape " + shape_str(b.shape) + " does not match Co=" +
            std::to_string(w.shape[0]));
  check(x.shape[1] == w.shape[1],
        "conv2d: input channels " + std::to_string(x.shape[1]) +
            " != kernel channels " + std::to_string(w.shape[1]));
  check(stride >= 1, "conv2d: stride must be positive");
  check(pad >= 0, "conv2d: pad must be nonnegative");
  check(w.shape[2] <= x.shape[2] + 2 * pad && w.shape[3] <= x.shape[3] + 2 * pad,
        "conv2d: kernel " + shape_str(w.shape) + " larger than padded input " +
            shape_str(x.shape) + " with pad " + std::to_string(pad));

  const auto d = conv_dims(x.shape, w.shape, stride, pad);
  TapeNode n;
  n.op = OpKind::kConv2d;
  n.inputs = {ix, iw, ib};
  n.shape = {d.n, d.cout, d.oh, d.ow};
  n.ictx = {stride, pad};
  n.values.assign(static_cast<std::size_t>(numel(n.shape)), 0.0);
  kernels::conv2d_forward(x.values.data(), w.values.data(), b.values.data(),
                          n.values.data(), d);
  n.needs_grad = nodes_[ix].needs_grad || nodes_[iw].needs_grad || nodes_[ib].needs_grad;
  return wrap(push(std::move(n)));
}

Tensor Tape::dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  const auto ix = require_on_tape(x, "dense");
  const auto iw = require_on_tape(w, "dense");
  const auto ib = require_on_tape(b, "dense");
  check(x.shape.size() == 2, "dense: input must be [N,D], got " + shape_str(x.shape));
  check(w.shape.size() == 2, "dense: weight must be [K,D], got " + shape_str(w.shape));
  check(x.shape[1] == w.shape[1],
        "dense: inner dims disagree: input D=" + std::to_string(x.shape[1]) +
            ", weight D=" + std::to_string(w.shape[1]));
  check(b.shape.size() == 1 && b.shape[0] == w.shape[0],
        "dense: bias shape " + shape_str(b.shape) + " does not match K=" +
            std::to_string(w.shape[0]));
  TapeNode n;
  n.op = OpKind::kDense;
  n.inputs = {ix, iw, ib};
  n.shape = {x.shape[0], w.shape[0]};
  n.values.assign(static_cast<std::size_t>(numel(n.shape)), 0.0);
  kernels::dense_forward(x.values.data(), w.values.data(), b.values.data(),
                         n.values.data(), x.shape[0], x.shape[1], w.shape[0]);
  n.needs_grad = nodes_[ix].needs_grad || nodes_[iw].needs_grad || nodes_[ib].needs_grad;
  return wrap(push(std::move(n)));
}

Tensor Tape::global_avgpool(const Tensor& x) {
  const auto ix = require_on_tape(x, "global_avgpool");
  check(x.shape.size() == 4, "global_avgpool: input must be [N,C,H,W], got " +
                                 shape_str(x.shape));
  TapeNode n;
  n.op = OpKind::kAvgPool;
  n.inputs = {ix};
  n.shape = {x.shape[0], x.shape[1]};
  n.values.assign(static_cast<std::size_t>(numel(n.shape)), 0.0);
  kernels::avgpool_forward(x.values.data(), n.values.data(), x.shape[0],
                           x.shape[1], x.shape[2], x.shape[3]);
  n.needs_grad = nodes_[ix].needs_grad;
  return wrap(push(std::move(n)));
}

Tensor Tape::channel_mask(const Tensor& f, const std::vector<std::uint8_t>& keep) {
  const auto ifn = require_on_tape(f, "channel_mask");
  check(f.shape.size() == 4, "channel_mask: input must be [N,C,H,W], got " +
                                 shape_str(f.shape));
  check(static_cast<std::int64_t>(keep.size()) == f.shape[1],
        "channel_mask: mask length " + std::to_string(keep.size()) +
            " != channel count " + std::to_string(f.shape[1]));
  const std::int64_t nb = f.shape[0], c = f.shape[1], hw = f.shape[2] * f.shape[3];
  TapeNode n;
  n.op = OpKind::kChannelMask;
  n.inputs = {ifn};
  n.shape = f.shape;
  n.ictx.assign(keep.begin(), keep.end());
  n.values.assign(f.values.size(), 0.0);
  for (std::int64_t b = 0; b < nb; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      if (!keep[static_cast<std::size_t>(ch)]) continue;
      const std::size_t off = static_cast<std::size_t>((b * c + ch) * hw);
      std::copy(f.values.begin() + off, f.values.begin() + off + hw,
                n.values.begin() + off);
    }
  n.needs_grad = nodes_[ifn].needs_grad;
  return wrap(push(std::move(n)));
}

Tensor Tape::cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const auto il = require_on_tape(logits, "cross_entropy");
  check(logits.shape.size() == 2, "cross_entropy: logits must be [N,K], got " +
                                      shape_str(logits.shape));
  const std::int64_t rows = logits.shape[0];
  const std::int64_t cols = logits.shape[1];
  check(static_cast<std::int64_t>(labels.size()) == rows,
        "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
            std::to_string(rows) + " rows");
  for (int y : labels)
    check(y >= 0 && y < cols, "cross_entropy: label " + std::to_string(y) +
                                  " outside [0," + std::to_string(cols) + ")");
  double total = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = logits.values.data() + r * cols;
    double mx = in[0];
    for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    double denom = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) denom += std::exp(in[c] - mx);
    const double lse = mx + std::log(denom);
    total += lse - in[labels[static_cast<std::size_t>(r)]];
  }
  TapeNode n;
  n.op = OpKind::kCrossEntropy;
  n.inputs = {il};
  n.shape = {1};
  n.values = {total / static_cast<double>(rows)};
  n.ictx.assign(labels.begin(), labels.end());
  n.needs_grad = nodes_[il].needs_grad;
  return wrap(push(std::move(n)));
}

Tensor Tape::triplet_hinge(const Tensor& emb, const std::vector<Triple>& triples,
                           double alpha) {
  const auto ie = require_on_tape(emb, "triplet_hinge");
  check(emb.shape.size() == 2, "triplet_hinge: embeddings must be [N,D], got " +
                                   shape_str(emb.shape));
  const std::int64_t rows = emb.shape[0];
  const std::int64_t dim = emb.shape[1];
  TapeNode n;
  n.op = OpKind::kTripletHinge;
  n.inputs = {ie};
  n.shape = {1};
  n.ctx = {alpha};
  for (const Triple& t : triples) {
    check(t.anchor >= 0 && t.anchor < rows && t.positive >= 0 &&
              t.positive < rows && t.negative >= 0 && t.negative < rows,
          "triplet_hinge: triple index out of range");
    n.ictx.push_back(t.anchor);
    n.ictx.push_back(t.positive);
    n.ictx.push_back(t.negative);
  }
  double total = 0.0;
  for (const Triple& t : triples) {
    const double* ea = emb.values.data() + t.anchor * dim;
    const double* ep = emb.values.data() + t.positive * dim;
    const double* en = emb.values.data() + t.negative * dim;
    double dp = 0.0, dn = 0.0;
    for (std::int64_t j = 0; j < dim; ++j) {
      const double a = ea[j] - ep[j];
      const double b = ea[j] - en[j];
      dp += a * a;
      dn += b * b;
    }
    total += std::max(dp - dn + alpha, 0.0);
  }
  n.values = {triples.empty() ? 0.0 : total / static_cast<double>(triples.size())};
  n.needs_grad = nodes_[ie].needs_grad && !triples.empty();
  return wrap(push(std::move(n)));
}

void Tape::backward(const Tensor& loss) {
  const auto root = require_on_tape(loss, "backward");
  check(numel(nodes_[static_cast<std::size_t>(root)].shape) == 1,
        "backward: loss must be scalar, got shape " +
            shape_str(nodes_[static_cast<std::size_t>(root)].shape));

  grads_.assign(nodes_.size(), {});
  auto ensure = [&](std::int64_t id) -> std::vector<double>& {
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty())
      g.assign(static_cast<std::size_t>(
                   numel(nodes_[static_cast<std::size_t>(id)].shape)),
               0.0);
    return g;
  };
  ensure(root)[0] = 1.0;

  for (std::int64_t id = root; id >= 0; --id) {
    const TapeNode& n = nodes_[static_cast<std::size_t>(id)];
    const auto& g = grads_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || g.empty()) continue;
    auto needs = [&](std::int64_t in) {
      return nodes_[static_cast<std::size_t>(in)].needs_grad;
    };
    auto in_vals = [&](std::size_t k) -> const std::vector<double>& {
      return nodes_[static_cast<std::size_t>(n.inputs[k])].values;
    };
    switch (n.op) {
      case OpKind::kLeaf:
        break;
      case OpKind::kAdd: {
        for (int k = 0; k < 2; ++k)
          if (needs(n.inputs[k])) {
            auto& gi = ensure(n.inputs[k]);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
          }
        break;
      }
      case OpKind::kMul: {
        if (needs(n.inputs[0])) {
          auto& gi = ensure(n.inputs[0]);
          const auto& other = in_vals(1);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * other[i];
        }
        if (needs(n.inputs[1])) {
          auto& gi = ensure(n.inputs[1]);
          const auto& other = in_vals(0);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * other[i];
        }
        break;
      }
      case OpKind::kScale: {
        if (needs(n.inputs[0])) {
          auto& gi = ensure(n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * n.ctx[0];
        }
        break;
      }
      case OpKind::kSum: {
        if (needs(n.inputs[0])) {
          auto& gi = ensure(n.inputs[0]);
          for (auto& v : gi) v += g[0];
        }
        break;
      }
      case OpKind::kSelect: {
        if (needs(n.inputs[0]))
          ensure(n.inputs[0])[static_cast<std::size_t>(n.ictx[0])] += g[0];
        break;
      }
      case OpKind::kRelu: {
        if (needs(n.inputs[0])) {
          auto& gi = ensure(n.inputs[0]);
          const auto& x = in_vals(0);
          // subgradient at exactly 0 is 0
          for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0) gi[i] += g[i];
        }
        break;
      }
      case OpKind::kSoftmax: {
        if (needs(n.inputs[0])) {
          auto& gi = ensure(n.inputs[0]);
          const std::int64_t rows = n.shape[0], cols = n.shape[1];
          for (std::int64_t r = 0; r < rows; ++r) {
            const double* s = n.values.data() + r * cols;
            const double* go = g.data() + r * cols;
            double dot = 0.0;
            for (std::int64_t c = 0; c < cols; ++c) dot += go[c] * s[c];
            for (std::int64_t c = 0; c < cols; ++c)
              gi[static_cast<std::size_t>(r * cols + c)] += s[c] * (go[c] - dot);
          }
        }
        break;
      }
      case OpKind::kConv2d: {
        const auto& xs = nodes_[static_cast<std::size_t>(n.inputs[0])].shape;
        const auto& ws = nodes_[static_cast<std::size_t>(n.inputs[1])].shape;
        const auto d = conv_dims(xs, ws, n.ictx[0], n.ictx[1]);
        if (needs(n.inputs[0])) {
          std::vector<double> gx(in_vals(0).size(), 0.0);
          kernels::conv2d_backward_input(g.data(), in_vals(1).data(), gx.data(), d);
          auto& gi = ensure(n.inputs[0]);
          for (std::size_t i = 0; i < gx.size(); ++i) gi[i] += gx[i];
        }
        if (needs(n.inputs[1])) {
          std::vector<double> gw(in_vals(1).size(), 0.0);
          kernels::conv2d_backward_weight(g.data(), in_vals(0).data(), gw.data(), d);
          auto& gi = ensure(n.inputs[1]);
          for (std::size_t i = 0; i < gw.size(); ++i) gi[i] += gw[i];
        }
        if (needs(n.inputs[2])) {
          std::vector<double> gb(in_vals(2).size(), 0.0);
          kernels::conv2d_backward_bias(g.data(), gb.data(), d);
          auto& gi = ensure(n.inputs[2]);
          for (std::size_t i = 0; i < gb.size(); ++i) gi[i] += gb[i];
        }
        break;
      }
      case OpKind::kDense: {
        const auto& xs = nodes_[static_cast<std::size_t>(n.inputs[0])].shape;
        const auto& ws = nodes_[static_cast<std::size_t>(n.inputs[1])].shape;
        const std::int64_t bn = xs[0], din = xs[1], dout = ws[0];
        if (needs(n.inputs[0])) {
          std::vector<double> gx(in_vals(0).size(), 0.0);
          kernels::dense_backward_input(g.data(), in_vals(1).data(), gx.data(),
                                        bn, din, dout);
          auto& gi = ensure(n.inputs[0]);
          for (std::size_t i = 0; i < gx.size(); ++i) gi[i] += gx[i];
        }
        if (needs(n.inputs[1])) {
          std::vector<double> gw(in_vals(1).size(), 0.0);
          kernels::dense_backward_weight(g.data(), in_vals(0).data(), gw.data(),
                                         bn, din, dout);
          auto& gi = ensure(n.inputs[1]);
          for (std::size_t i = 0; i < gw.size(); ++i) gi[i] += gw[i];
        }
        if (needs(n.inputs[2])) {
          std::vector<double> gb(in_vals(2).size(), 0.0);
          kernels::dense_backward_bias(g.data(), gb.data(), bn, dout);
          auto& gi = ensure(n.inputs[2]);
          for (std::size_t i = 0; i < gb.size(); ++i) gi[i] += gb[i];
        }
        break;
      }
      case OpKind::kAvgPool: {
        if (needs(n.inputs[0])) {
          const auto& xs = nodes_[static_cast<std::size_t>(n.inputs[0])].shape;
          std::vector<double> gx(in_vals(0).size(), 0.0);
          kernels::avgpool_backward(g.data(), gx.data(), xs[0], xs[1], xs[2], xs[3]);
          auto& gi = ensure(n.inputs[0]);
          for (std::size_t i = 0; i < gx.size(); ++i) gi[i] += gx[i];
        }
        break;
      }
      case OpKind::kChannelMask: {
        if (needs(n.inputs[0])) {
          auto& gi = ensure(n.inputs[0]);
          const std::int64_t nb = n.shape[0], c = n.shape[1],
                             hw = n.shape[2] * n.shape[3];
          for (std::int64_t b = 0; b < nb; ++b)
            for (std::int64_t ch = 0; ch < c; ++ch) {
              if (!n.ictx[static_cast<std::size_t>(ch)]) continue;
              const std::size_t off = static_cast<std::size_t>((b * c + ch) * hw);
              for (std::int64_t s = 0; s < hw; ++s) gi[off + s] += g[off + s];
            }
        }
        break;
      }
      case OpKind::kCrossEntropy: {
        if (needs(n.inputs[0])) {
          auto& gi = ensure(n.inputs[0]);
          const auto& logits = in_vals(0);
          const auto& ls = nodes_[static_cast<std::size_t>(n.inputs[0])].shape;
          const std::int64_t rows = ls[0], cols = ls[1];
          const double gscale = g[0] / static_cast<double>(rows);
          for (std::int64_t r = 0; r < rows; ++r) {
            const double* in = logits.data() + r * cols;
            double mx = in[0];
            for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
            double denom = 0.0;
            for (std::int64_t c = 0; c < cols; ++c) denom += std::exp(in[c] - mx);
            for (std::int64_t c = 0; c < cols; ++c) {
              double p = std::exp(in[c] - mx) / denom;
              if (c == n.ictx[static_cast<std::size_t>(r)]) p -= 1.0;
              gi[static_cast<std::size_t>(r * cols + c)] += gscale * p;
            }
          }
        }
        break;
      }
      case OpKind::kTripletHinge: {
        if (needs(n.inputs[0]) && !n.ictx.empty()) {
          auto& gi = ensure(n.inputs[0]);
          const auto& emb = in_vals(0);
          const auto& es = nodes_[static_cast<std::size_t>(n.inputs[0])].shape;
          const std::int64_t dim = es[1];
          const std::int64_t nt = static_cast<std::int64_t>(n.ictx.size()) / 3;
          const double gscale = g[0] / static_cast<double>(nt);
          const double alpha = n.ctx[0];
          for (std::int64_t t = 0; t < nt; ++t) {
            const std::int64_t a = n.ictx[static_cast<std::size_t>(3 * t)];
            const std::int64_t p = n.ictx[static_cast<std::size_t>(3 * t + 1)];
            const std::int64_t ng = n.ictx[static_cast<std::size_t>(3 * t + 2)];
            const double* ea = emb.data() + a * dim;
            const double* ep = emb.data() + p * dim;
            const double* en = emb.data() + ng * dim;
            double dp = 0.0, dn = 0.0;
            for (std::int64_t j = 0; j < dim; ++j) {
              const double u = ea[j] - ep[j];
              const double v = ea[j] - en[j];
              dp += u * u;
              dn += v * v;
            }
            if (dp - dn + alpha <= 0.0) continue;  // inactive hinge
            for (std::int64_t j = 0; j < dim; ++j) {
              const double u = ea[j] - ep[j];
              const double v = ea[j] - en[j];
              gi[static_cast<std::size_t>(a * dim + j)] += gscale * 2.0 * (u - v);
              gi[static_cast<std::size_t>(p * dim + j)] -= gscale * 2.0 * u;
              gi[static_cast<std::size_t>(ng * dim + j)] += gscale * 2.0 * v;
            }
          }
        }
        break;
      }
    }
  }

  // Accumulate across leaf nodes in case one tensor was leafed twice.
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    TapeNode& n = nodes_[id];
    if (n.op == OpKind::kLeaf && n.owner && n.needs_grad)
      n.owner->grad.assign(n.values.size(), 0.0);
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    TapeNode& n = nodes_[id];
    if (n.op == OpKind::kLeaf && n.owner && n.needs_grad && !grads_[id].empty())
      for (std::size_t i = 0; i < grads_[id].size(); ++i)
        n.owner->grad[i] += grads_[id][i];
  }
}

const std::vector<double>& Tape::node_grad(std::int64_t node) const {
  check(node >= 0 && node < size(), "node_grad: node id out of range");
  static const std::vector<double> kEmpty;
  if (grads_.empty()) return kEmpty;
  return grads_[static_cast<std::size_t>(node)];
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

double finite_diff_check(
    const std::function<GradProbe(const std::vector<double>&)>& f,
    const std::vector<double>& point, double h) {
  const GradProbe probe = f(point);
  check(probe.grad.size() == point.size(),
        "finite_diff_check: gradient size does not match point size");
  double worst = 0.0;
  std::vector<double> x = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    x[i] = point[i] + h;
    const double fp = f(x).value;
    x[i] = point[i] - h;
    const double fm = f(x).value;
    x[i] = point[i];
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = probe.grad[i];
    const double denom =
        std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

AdamState make_adam(const std::vector<Tensor*>& params, AdamConfig cfg) {
  AdamState st;
  st.cfg = cfg;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Tensor* p : params) {
    st.m.emplace_back(p->values.size(), 0.0);
    st.v.emplace_back(p->values.size(), 0.0);
  }
  return st;
}

void adam_step(const std::vector<Tensor*>& params, AdamState& state) {
  check(params.size() == state.m.size(),
        "adam_step: parameter count changed since make_adam");
  state.t += 1;
  const double b1 = state.cfg.beta1;
  const double b2 = state.cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    check(p.grad.empty() || p.grad.size() == p.values.size(),
          "adam_step: gradient shape mismatch for parameter " + std::to_string(k));
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double g = p.grad.empty() ? 0.0 : p.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.values[i] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
    }
  }
}

}  // namespace cfd
