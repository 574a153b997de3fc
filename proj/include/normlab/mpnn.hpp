#pragma once

#include <variant>
#include <vector>

#include "normlab/autodiff.hpp"
#include "normlab/graph.hpp"
#include "normlab/rng.hpp"

namespace normlab {

enum class ActivationKind { Relu, Identity };

Tensor apply_activation(const Tensor& x, ActivationKind kind);

// Two linear layers with an activation between; the output layer is linear.
struct Mlp {
  Tensor w1, b1, w2, b2;
  ActivationKind hidden_act = ActivationKind::Relu;

  static Mlp create(int64_t in, int64_t hidden, int64_t out, Rng& rng);
  static Mlp identity_map(int64_t width);  // exact pass-through
  static Mlp zero_map(int64_t in, int64_t out);

  int64_t in_width() const { return w1.dim(0); }
  int64_t out_width() const { return w2.dim(1); }
  Tensor forward(const Tensor& x) const;
  std::vector<Tensor*> params();
};

// h' = h W_self + (A h) W_neigh
struct GraphConvLayer {
  Tensor w_self, w_neigh;

  static GraphConvLayer create(int64_t in, int64_t out, Rng& rng);
  int64_t in_width() const { return w_self.dim(0); }
  int64_t out_width() const { return w_self.dim(1); }
  std::vector<Tensor*> params() { return {&w_self, &w_neigh}; }
};

// h' = MLP((1 + eps_gin) h + sum_{u in N(v)} h_u)
struct GINLayer {
  double eps_gin = 0.0;
  Mlp mlp;

  static GINLayer create(int64_t in, int64_t out, Rng& rng);
  int64_t in_width() const { return mlp.in_width(); }
  int64_t out_width() const { return mlp.out_width(); }
  std::vector<Tensor*> params() { return mlp.params(); }
};

using GnnLayer = std::variant<GraphConvLayer, GINLayer>;

int64_t gnn_in_width(const GnnLayer& layer);
int64_t gnn_out_width(const GnnLayer& layer);
std::vector<Tensor*> gnn_params(GnnLayer& layer);

// Per-graph neighbor aggregation sum_{u in N(v)} x_u via the batch edge
// lists; linear in nodes + edges, padded rows stay zero.
Tensor neighbor_sum(const Tensor& x, const GraphBatch& batch);

Tensor graphconv_forward(const GraphBatch& batch, const Tensor& h, const GraphConvLayer& layer);
Tensor gin_forward(const GraphBatch& batch, const Tensor& h, const GINLayer& layer);
Tensor gnn_forward(const GraphBatch& batch, const Tensor& h, const GnnLayer& layer);

// Masked per-graph sum over nodes: [B,n,C] -> [B,C].
Tensor sum_pool(const Tensor& h, const GraphBatch& batch);
// Masked per-graph mean over nodes.
Tensor mean_pool(const Tensor& h, const GraphBatch& batch);

}  // namespace normlab
