#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab {

using GradMap = std::unordered_map<int, Tensor>;

// Reverse-mode tape. Nodes are recorded in topological order (parents always
// precede children); every node stores its output value plus a forward kernel,
// so the whole graph can be replayed from the leaves and checked bit-for-bit.
class Tape {
 public:
  using ParentValues = std::vector<const Tensor*>;
  // Receives parent values; returns the node's output.
  using ForwardFn = std::function<Tensor(const ParentValues&)>;
  // Receives (parent values, node output, upstream gradient); returns one
  // gradient per parent. An empty tensor means "no gradient flows here".
  using BackwardFn = std::function<std::vector<Tensor>(const ParentValues&, const Tensor&, const Tensor&)>;

  struct Node {
    const char* op;
    std::vector<int> parents;
    Tensor value;
    bool requires_grad = false;  // meaningful for leaves only
    ForwardFn forward;
    BackwardFn backward;
  };

  // Registers `value` as a leaf and returns it bound to this tape.
  Tensor leaf(Tensor value, bool requires_grad = true);

  // Records an op node; returns its id. `out` keeps its binding untouched --
  // callers bind the returned id themselves.
  int record(const char* op, std::vector<int> parents, const Tensor& out, ForwardFn fwd, BackwardFn bwd);

  // Node id of `t` on this tape, recording it as a constant leaf if needed.
  int ensure(const Tensor& t);

  // Reverse accumulation from a scalar output. Returns gradients for every
  // grad-requiring leaf; leaves the output does not depend on get zeros.
  GradMap backward(const Tensor& scalar_output) const;

  // Replays every op node from the leaves; true iff all stored outputs are
  // reproduced bit-for-bit.
  bool replay_reproduces() const;

  size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

 private:
  std::vector<Node> nodes_;
};

// Resolves the tape shared by a set of operands (nullptr if none is tracked;
// throws ContractError when two different tapes are mixed).
Tape* joint_tape(std::initializer_list<const Tensor*> operands);

// --- elementwise ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor abs(const Tensor& x);  // subgradient at 0 is 0
Tensor sqrt(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor pow_scalar(const Tensor& x, double p);  // requires x > 0
Tensor max_scalar(const Tensor& x, double c);  // gradient passes where x > c
// Routes gradient to `a` where cond != 0 and to `b` elsewhere; cond is constant.
Tensor select(const Tensor& cond, const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

// --- linear algebra ---
// [m,k]x[k,n] -> [m,n]; a may carry one leading batch dim: [B,m,k]x[k,n] -> [B,m,n].
Tensor matmul(const Tensor& a, const Tensor& b);
// x: [..., C] + bias[C] broadcast over leading dims.
Tensor add_channels(const Tensor& x, const Tensor& bias);
// x: [..., C] * scale[C] broadcast over leading dims.
Tensor scale_channels(const Tensor& x, const Tensor& scale);
// Last-dim concatenation; leading dims must agree.
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Row-wise softmax over the last dimension.
Tensor softmax_lastdim(const Tensor& x);

// --- reductions ---
enum class ReduceKind { Sum, Mean, Var };  // Var is the biased estimator

// Removes `axes` from the shape; kept-axes order preserved.
Tensor reduce(const Tensor& x, const std::vector<int>& axes, ReduceKind kind);
inline Tensor reduce_sum(const Tensor& x, const std::vector<int>& axes) {
  return reduce(x, axes, ReduceKind::Sum);
}
inline Tensor reduce_mean(const Tensor& x, const std::vector<int>& axes) {
  return reduce(x, axes, ReduceKind::Mean);
}

// Statistics axes for masked [B,n,C] group means, named after which
// dimensions the group spans.
enum class StatsAxes {
  BatchNode,    // all valid nodes of all graphs, per channel
  Node,         // all valid nodes of one graph, per channel
  Channel,      // all channels of one node
  NodeChannel,  // all valid nodes and channels of one graph
};

// Per-group masked mean broadcast back to [B,n,C]; masked positions are 0.
// `mask` is a constant [B,n] 0/1 tensor. Throws DegenerateReductionError when
// a group that owns valid output positions is empty.
Tensor group_mean(const Tensor& x, const Tensor& mask, StatsAxes axes);

// --- verification ---
// Max over coordinates of |analytic - central difference| /
// max(|analytic|, |central|, 1e-8) for a scalar-valued f at x.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

}  // namespace normlab
