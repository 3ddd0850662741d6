#pragma once

// Reverse-mode tape over the kernel set. Nodes are append-only, so creation
// order is a valid forward order and reverse creation order is a valid
// backward order. A node consumed k times accumulates the sum of its k
// upstream contributions.

#include <array>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "cloudmask/kernels.hpp"
#include "cloudmask/tensor.hpp"

namespace cloudmask {

template <typename T>
class GraphT {
 public:
  using NodeId = int;

  NodeId leaf(TensorT<T> value) {
    return push(Op::kLeaf, {-1, -1, -1}, std::move(value));
  }

  NodeId conv2d(NodeId x, NodeId k, NodeId b, Padding pad) {
    Node& node = at(push(Op::kConv, {x, k, b}, conv2d_forward(val(x), val(k), val(b), pad)));
    node.pad = pad;
    return node.id;
  }

  NodeId maxpool2(NodeId x) {
    Pooled<T> p = maxpool2_forward(val(x));
    Node& node = at(push(Op::kMaxpool, {x, -1, -1}, std::move(p.out)));
    node.argmax = std::move(p.argmax);
    return node.id;
  }

  NodeId upconv2(NodeId x, NodeId k, NodeId b) {
    return push(Op::kUpconv, {x, k, b}, upconv2_forward(val(x), val(k), val(b)));
  }

  NodeId concat_channels(NodeId a, NodeId b) {
    Node& node = at(push(Op::kConcat, {a, b, -1}, concat_forward(val(a), val(b))));
    node.concat_ca = val(a).dim(1);
    return node.id;
  }

  NodeId relu(NodeId x) { return push(Op::kRelu, {x, -1, -1}, relu_forward(val(x))); }

  NodeId sigmoid(NodeId x) { return push(Op::kSigmoid, {x, -1, -1}, sigmoid_forward(val(x))); }

  NodeId bce_loss(NodeId probs, NodeId targets) {
    const double exact = bce_sum(val(probs), val(targets)) / static_cast<double>(val(probs).numel());
    Node& node = at(push(Op::kBce, {probs, targets, -1}, TensorT<T>::scalar(static_cast<T>(exact))));
    node.scalar64 = exact;
    return node.id;
  }

  NodeId sum(NodeId x) {
    const double exact = sum_exact(val(x));
    Node& node = at(push(Op::kSum, {x, -1, -1}, TensorT<T>::scalar(static_cast<T>(exact))));
    node.scalar64 = exact;
    return node.id;
  }

  const TensorT<T>& value(NodeId id) const { return at(id).value; }

  // Scalar reductions keep their 64-bit accumulation; reading it avoids
  // quantizing finite-difference numerators to storage precision.
  double scalar_value(NodeId id) const {
    const Node& n = at(id);
    if (!n.value.is_scalar()) throw ShapeError("scalar_value: node is not scalar");
    return std::isnan(n.scalar64) ? static_cast<double>(n.value.data[0]) : n.scalar64;
  }

  // Fingerprint of every branch decision taken in this forward pass: relu
  // sign patterns, maxpool winners and bce clamp activity. Two evaluations
  // with equal signatures lie on the same smooth piece of the loss.
  std::uint64_t branch_signature() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 1099511628211ULL;
    };
    for (const Node& n : nodes_) {
      if (n.kind == Op::kRelu) {
        std::uint64_t word = 0;
        int bits = 0;
        for (T v : at(n.in[0]).value.data) {
          word = (word << 1) | (v > T(0) ? 1u : 0u);
          if (++bits == 64) {
            mix(word);
            word = 0;
            bits = 0;
          }
        }
        mix(word);
      } else if (n.kind == Op::kMaxpool) {
        for (std::int64_t idx : n.argmax) mix(static_cast<std::uint64_t>(idx));
      } else if (n.kind == Op::kBce) {
        std::uint64_t word = 0;
        int bits = 0;
        for (T v : at(n.in[0]).value.data) {
          const double p = static_cast<double>(v);
          word = (word << 1) | ((p < kBceEps || p > 1.0 - kBceEps) ? 1u : 0u);
          if (++bits == 64) {
            mix(word);
            word = 0;
            bits = 0;
          }
        }
        mix(word);
      }
    }
    return h;
  }

  bool backward_done() const { return backward_done_; }

  void backward(NodeId root) {
    if (backward_done_) throw Error("backward already ran on this graph; build a fresh graph instead");
    const Node& r = at(root);
    if (!r.value.is_scalar()) {
      throw ShapeError("backward root must be scalar, got shape " + shape_str(r.value.shape));
    }
    backward_done_ = true;
    if (!r.needs_grad) return;
    for (NodeId id = 0; id <= root; ++id) {
      Node& n = at(id);
      if (n.needs_grad) {
        n.grad = TensorT<T>::zeros(n.value.shape);
        n.has_grad = true;
      }
    }
    at(root).grad.data[0] = T(1);
    for (NodeId id = root; id >= 0; --id) {
      Node& n = at(id);
      if (!n.has_grad || n.kind == Op::kLeaf) continue;
      dispatch_backward(n);
    }
  }

  const TensorT<T>& grad(NodeId id) const {
    if (!backward_done_) throw Error("grad requested before backward");
    const Node& n = at(id);
    if (!n.has_grad) throw Error("node has no gradient (it does not require one or does not feed the loss)");
    return n.grad;
  }

  bool has_grad(NodeId id) const { return backward_done_ && at(id).has_grad; }

  size_t size() const { return nodes_.size(); }

 private:
  enum class Op { kLeaf, kConv, kMaxpool, kUpconv, kConcat, kRelu, kSigmoid, kBce, kSum };

  struct Node {
    NodeId id = -1;
    Op kind = Op::kLeaf;
    std::array<NodeId, 3> in{-1, -1, -1};
    TensorT<T> value;
    TensorT<T> grad;
    double scalar64 = std::numeric_limits<double>::quiet_NaN();
    bool needs_grad = false;
    bool has_grad = false;
    Padding pad = Padding::kSame;
    std::vector<std::int64_t> argmax;
    int concat_ca = 0;
  };

  static const char* op_name(Op op) {
    switch (op) {
      case Op::kLeaf: return "leaf";
      case Op::kConv: return "conv2d";
      case Op::kMaxpool: return "maxpool2";
      case Op::kUpconv: return "upconv2";
      case Op::kConcat: return "concat_channels";
      case Op::kRelu: return "relu";
      case Op::kSigmoid: return "sigmoid";
      case Op::kBce: return "bce_loss";
      case Op::kSum: return "sum";
    }
    return "?";
  }

  static void check_finite(const TensorT<T>& t, const char* who) {
    if (!t.all_finite()) {
      throw ValueError(std::string(who) + " produced non-finite values (shape " + shape_str(t.shape) + ")");
    }
  }

  NodeId push(Op kind, std::array<NodeId, 3> in, TensorT<T> value) {
    check_finite(value, op_name(kind));
    Node n;
    n.id = static_cast<NodeId>(nodes_.size());
    n.kind = kind;
    n.in = in;
    if (kind == Op::kLeaf) {
      n.needs_grad = value.requires_grad;
    } else {
      for (NodeId i : in) {
        if (i >= 0 && at(i).needs_grad) n.needs_grad = true;
      }
    }
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
  }

  Node& at(NodeId id) {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) throw Error("invalid node id");
    return nodes_[static_cast<size_t>(id)];
  }
  const Node& at(NodeId id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) throw Error("invalid node id");
    return nodes_[static_cast<size_t>(id)];
  }

  const TensorT<T>& val(NodeId id) const { return at(id).value; }

  TensorT<T>* grad_slot(NodeId id) {
    Node& n = at(id);
    return n.has_grad ? &n.grad : nullptr;
  }

  void dispatch_backward(Node& n) {
    switch (n.kind) {
      case Op::kConv:
        conv2d_backward(val(n.in[0]), val(n.in[1]), n.pad, n.grad, grad_slot(n.in[0]), grad_slot(n.in[1]),
                        grad_slot(n.in[2]));
        break;
      case Op::kMaxpool:
        if (auto* dx = grad_slot(n.in[0])) maxpool2_backward(n.argmax, n.grad, dx);
        break;
      case Op::kUpconv:
        upconv2_backward(val(n.in[0]), val(n.in[1]), n.grad, grad_slot(n.in[0]), grad_slot(n.in[1]),
                         grad_slot(n.in[2]));
        break;
      case Op::kConcat:
        concat_backward(n.grad, n.concat_ca, grad_slot(n.in[0]), grad_slot(n.in[1]));
        break;
      case Op::kRelu:
        if (auto* dx = grad_slot(n.in[0])) relu_backward(val(n.in[0]), n.grad, dx);
        break;
      case Op::kSigmoid:
        if (auto* dx = grad_slot(n.in[0])) sigmoid_backward(n.value, n.grad, dx);
        break;
      case Op::kBce:
        if (auto* dp = grad_slot(n.in[0])) bce_backward(val(n.in[0]), val(n.in[1]), n.grad, dp);
        break;
      case Op::kSum:
        if (auto* dx = grad_slot(n.in[0])) sum_backward(n.grad, dx);
        break;
      case Op::kLeaf:
        break;
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

using Graph = GraphT<float>;

struct GradCheckStats {
  std::int64_t checked = 0;
  std::int64_t skipped = 0;  // probes whose FD interval crossed a kink
};

// Central-difference verification of the whole backward pass. `build` must
// construct the loss node from leaves for the given inputs on a fresh graph;
// only inputs flagged requires_grad are perturbed. Returns the worst
// relative error with denominator max(|analytic|, |numeric|, 1e-8).
//
// Probes whose +/-eps evaluations land on different smooth pieces of the
// loss (a relu flipping sign, a pool changing winner, the bce clamp
// engaging) are excluded: a central difference across a kink does not
// estimate any derivative. Exclusions are counted in `stats`.
template <typename T, typename Builder>
double grad_check(Builder&& build, const std::vector<TensorT<T>>& inputs, double eps,
                  GradCheckStats* stats = nullptr) {
  if (eps < 1e-5 || eps > 1e-2) {
    throw ValueError("grad_check: eps " + std::to_string(eps) + " outside [1e-5, 1e-2]");
  }

  auto eval = [&](const std::vector<TensorT<T>>& ins, bool with_grad) {
    GraphT<T> g;
    std::vector<typename GraphT<T>::NodeId> ids;
    ids.reserve(ins.size());
    for (const auto& t : ins) {
      TensorT<T> copy = t;
      if (!with_grad) copy.requires_grad = false;
      ids.push_back(g.leaf(std::move(copy)));
    }
    typename GraphT<T>::NodeId loss = build(g, ids);
    if (!g.value(loss).is_scalar()) {
      throw ShapeError("grad_check: builder must produce a scalar loss");
    }
    return std::pair<GraphT<T>, typename GraphT<T>::NodeId>(std::move(g), loss);
  };

  auto [g0, loss0] = eval(inputs, true);
  const std::uint64_t sig0 = g0.branch_signature();
  g0.backward(loss0);
  std::vector<TensorT<T>> analytic;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const int id = static_cast<int>(i);
    analytic.push_back(inputs[i].requires_grad && g0.has_grad(id) ? g0.grad(id)
                                                                  : TensorT<T>::zeros(inputs[i].shape));
  }

  GradCheckStats local;
  GradCheckStats& st = stats ? *stats : local;
  double worst = 0.0;
  std::vector<TensorT<T>> probe = inputs;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad) continue;
    for (size_t s = 0; s < probe[i].data.size(); ++s) {
      const T saved = probe[i].data[s];
      probe[i].data[s] = static_cast<T>(static_cast<double>(saved) + eps);
      auto [gp, lp] = eval(probe, false);
      const double fplus = gp.scalar_value(lp);
      const std::uint64_t sigp = gp.branch_signature();
      probe[i].data[s] = static_cast<T>(static_cast<double>(saved) - eps);
      auto [gm, lm] = eval(probe, false);
      const double fminus = gm.scalar_value(lm);
      const std::uint64_t sigm = gm.branch_signature();
      probe[i].data[s] = saved;

      if (sigp != sig0 || sigm != sig0) {
        ++st.skipped;
        continue;
      }
      ++st.checked;
      const double numeric = (fplus - fminus) / (2.0 * eps);
      const double a = static_cast<double>(analytic[i].data[s]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace cloudmask
