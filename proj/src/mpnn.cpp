#include "normlab/mpnn.hpp"

#include <algorithm>
#include <cmath>

namespace normlab {

Tensor apply_activation(const Tensor& x, ActivationKind kind) {
  return kind == ActivationKind::Relu ? relu(x) : x;
}

namespace {

Tensor init_weight(int64_t in, int64_t out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w({in, out});
  for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-a, a);
  return w;
}

}  // namespace

Mlp Mlp::create(int64_t in, int64_t hidden, int64_t out, Rng& rng) {
  Mlp m;
  m.w1 = init_weight(in, hidden, rng);
  m.b1 = Tensor({hidden});
  m.w2 = init_weight(hidden, out, rng);
  m.b2 = Tensor({out});
  return m;
}

Mlp Mlp::identity_map(int64_t width) {
  Mlp m;
  m.w1 = Tensor::identity(width);
  m.b1 = Tensor({width});
  m.w2 = Tensor::identity(width);
  m.b2 = Tensor({width});
  m.hidden_act = ActivationKind::Identity;
  return m;
}

Mlp Mlp::zero_map(int64_t in, int64_t out) {
  Mlp m;
  m.w1 = Tensor({in, out});
  m.b1 = Tensor({out});
  m.w2 = Tensor({out, out});
  m.b2 = Tensor({out});
  m.hidden_act = ActivationKind::Identity;
  return m;
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = add_channels(matmul(x, w1), b1);
  h = apply_activation(h, hidden_act);
  return add_channels(matmul(h, w2), b2);
}

std::vector<Tensor*> Mlp::params() { return {&w1, &b1, &w2, &b2}; }

GraphConvLayer GraphConvLayer::create(int64_t in, int64_t out, Rng& rng) {
  GraphConvLayer l;
  l.w_self = init_weight(in, out, rng);
  l.w_neigh = init_weight(in, out, rng);
  return l;
}

GINLayer GINLayer::create(int64_t in, int64_t out, Rng& rng) {
  GINLayer l;
  // a 1-wide hidden layer would be a single relu bottleneck
  l.mlp = Mlp::create(in, std::max(in, out), out, rng);
  return l;
}

int64_t gnn_in_width(const GnnLayer& layer) {
  return std::visit([](const auto& l) { return l.in_width(); }, layer);
}

int64_t gnn_out_width(const GnnLayer& layer) {
  return std::visit([](const auto& l) { return l.out_width(); }, layer);
}

std::vector<Tensor*> gnn_params(GnnLayer& layer) {
  return std::visit([](auto& l) { return l.params(); }, layer);
}

namespace {

Tensor neighbor_sum_kernel(const Tensor& x, const GraphBatch& batch) {
  const int64_t n = batch.n_max;
  const int64_t c = x.dim(2);
  Tensor out(x.shape());
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    const double* xb = x.data() + b * n * c;
    double* ob = out.data() + b * n * c;
    for (auto [u, v] : batch.edges[static_cast<size_t>(b)]) {
      const double* xu = xb + u * c;
      const double* xv = xb + v * c;
      double* ou = ob + u * c;
      double* ov = ob + v * c;
      for (int64_t j = 0; j < c; ++j) {
        ou[j] += xv[j];
        ov[j] += xu[j];
      }
    }
  }
  return out;
}

}  // namespace

Tensor neighbor_sum(const Tensor& x, const GraphBatch& batch) {
  if (x.rank() != 3 || x.dim(0) != batch.batch_size || x.dim(1) != batch.n_max) {
    throw DimensionError("neighbor_sum: features " + shape_str(x.shape()) +
                         " do not match batch [" + std::to_string(batch.batch_size) + ", " +
                         std::to_string(batch.n_max) + ", *]");
  }
  Tensor out = neighbor_sum_kernel(x, batch);
  Tape* tape = joint_tape({&x});
  if (tape != nullptr) {
    // the adjacency is symmetric, so the adjoint is the same aggregation
    const GraphBatch* b = &batch;
    int id = tape->record(
        "neighbor_sum", {x.node()}, out,
        [b](const Tape::ParentValues& p) { return neighbor_sum_kernel(*p[0], *b); },
        [b](const Tape::ParentValues&, const Tensor&, const Tensor& g) {
          return std::vector<Tensor>{neighbor_sum_kernel(g, *b)};
        });
    out.bind(tape, id);
  }
  return out;
}

Tensor graphconv_forward(const GraphBatch& batch, const Tensor& h, const GraphConvLayer& layer) {
  if (h.dim(2) != layer.in_width()) {
    throw DimensionError("graphconv_forward: input width " + std::to_string(h.dim(2)) +
                         " != layer width " + std::to_string(layer.in_width()));
  }
  return add(matmul(h, layer.w_self), matmul(neighbor_sum(h, batch), layer.w_neigh));
}

Tensor gin_forward(const GraphBatch& batch, const Tensor& h, const GINLayer& layer) {
  if (h.dim(2) != layer.in_width()) {
    throw DimensionError("gin_forward: input width " + std::to_string(h.dim(2)) +
                         " != layer width " + std::to_string(layer.in_width()));
  }
  Tensor agg = add(mul_scalar(h, 1.0 + layer.eps_gin), neighbor_sum(h, batch));
  Tensor out = layer.mlp.forward(agg);
  if (!batch.padded) return out;
  // the MLP bias leaks into padded rows; re-zero them
  return mul(out, batch.mask_channels(out.dim(2)));
}

Tensor gnn_forward(const GraphBatch& batch, const Tensor& h, const GnnLayer& layer) {
  if (std::holds_alternative<GraphConvLayer>(layer)) {
    return graphconv_forward(batch, h, std::get<GraphConvLayer>(layer));
  }
  return gin_forward(batch, h, std::get<GINLayer>(layer));
}

Tensor sum_pool(const Tensor& h, const GraphBatch& batch) {
  if (!batch.padded) return reduce_sum(h, {1});
  return reduce_sum(mul(h, batch.mask_channels(h.dim(2))), {1});
}

Tensor mean_pool(const Tensor& h, const GraphBatch& batch) {
  Tensor pooled = sum_pool(h, batch);
  Tensor inv({batch.batch_size, pooled.dim(1)});
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    for (int64_t c = 0; c < pooled.dim(1); ++c) {
      inv.at(b, c) = 1.0 / static_cast<double>(batch.num_nodes[static_cast<size_t>(b)]);
    }
  }
  return mul(pooled, inv);
}

}  // namespace normlab
