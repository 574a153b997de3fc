#include "normlab/norms.hpp"

#include <cmath>
#include <memory>

#include "normlab/mpnn.hpp"

namespace normlab {

NormVariant norm_variant_from_name(const std::string& name) {
  if (name == "identity") return NormVariant::Identity;
  if (name == "batchnorm") return NormVariant::BatchNorm;
  if (name == "instancenorm") return NormVariant::InstanceNorm;
  if (name == "layernorm_node") return NormVariant::LayerNormNode;
  if (name == "layernorm_graph") return NormVariant::LayerNormGraph;
  if (name == "pairnorm") return NormVariant::PairNorm;
  if (name == "mean_subtraction") return NormVariant::MeanSubtraction;
  if (name == "diffgroupnorm") return NormVariant::DiffGroupNorm;
  if (name == "nodenorm") return NormVariant::NodeNorm;
  if (name == "graphnorm") return NormVariant::GraphNorm;
  if (name == "graphsizenorm") return NormVariant::GraphSizeNorm;
  if (name == "unitynorm") return NormVariant::UnityNorm;
  throw ArgumentError("unknown norm variant: " + name);
}

std::string norm_variant_name(NormVariant v) {
  switch (v) {
    case NormVariant::Identity: return "identity";
    case NormVariant::BatchNorm: return "batchnorm";
    case NormVariant::InstanceNorm: return "instancenorm";
    case NormVariant::LayerNormNode: return "layernorm_node";
    case NormVariant::LayerNormGraph: return "layernorm_graph";
    case NormVariant::PairNorm: return "pairnorm";
    case NormVariant::MeanSubtraction: return "mean_subtraction";
    case NormVariant::DiffGroupNorm: return "diffgroupnorm";
    case NormVariant::NodeNorm: return "nodenorm";
    case NormVariant::GraphNorm: return "graphnorm";
    case NormVariant::GraphSizeNorm: return "graphsizenorm";
    case NormVariant::UnityNorm: return "unitynorm";
  }
  throw ArgumentError("unknown norm variant enum");
}

const std::vector<NormVariant>& all_norm_variants() {
  static const std::vector<NormVariant> variants = {
      NormVariant::Identity,        NormVariant::BatchNorm,   NormVariant::InstanceNorm,
      NormVariant::LayerNormNode,   NormVariant::LayerNormGraph, NormVariant::PairNorm,
      NormVariant::MeanSubtraction, NormVariant::DiffGroupNorm,  NormVariant::NodeNorm,
      NormVariant::GraphNorm,       NormVariant::GraphSizeNorm,  NormVariant::UnityNorm,
  };
  return variants;
}

void NormSpec::validate() const {
  if (!(eps > 0.0)) {
    throw DegenerateReductionError("norm eps must be > 0, got " + std::to_string(eps));
  }
  if (clusters < 1) throw ArgumentError("diffgroupnorm clusters must be >= 1");
  if (p < 1.0) throw ArgumentError("nodenorm p must be >= 1");
}

AffineParams AffineParams::create(const NormSpec& spec, int64_t channels, Rng& rng) {
  AffineParams ap;
  ap.gamma = Tensor::ones({channels});
  ap.beta = Tensor::zeros({channels});
  if (spec.variant == NormVariant::GraphNorm) ap.alpha = Tensor::ones({channels});
  if (spec.variant == NormVariant::DiffGroupNorm) {
    const double a = std::sqrt(6.0 / static_cast<double>(channels + spec.clusters));
    ap.cluster_w = Tensor({channels, spec.clusters});
    for (int64_t i = 0; i < ap.cluster_w.size(); ++i) ap.cluster_w.data()[i] = rng.uniform(-a, a);
    for (int64_t d = 0; d < spec.clusters; ++d) {
      ap.cluster_gamma.push_back(Tensor::ones({channels}));
      ap.cluster_beta.push_back(Tensor::zeros({channels}));
    }
  }
  if (spec.variant == NormVariant::UnityNorm) ap.lambdas = Tensor::full({4}, 0.25);
  return ap;
}

std::vector<Tensor*> AffineParams::params() {
  std::vector<Tensor*> out;
  if (!gamma.empty()) out.push_back(&gamma);
  if (!beta.empty()) out.push_back(&beta);
  if (!alpha.empty()) out.push_back(&alpha);
  if (!cluster_w.empty()) out.push_back(&cluster_w);
  for (Tensor& t : cluster_gamma) out.push_back(&t);
  for (Tensor& t : cluster_beta) out.push_back(&t);
  if (!lambdas.empty()) out.push_back(&lambdas);
  return out;
}

MaskedStats masked_stats(const Tensor& h, const GraphBatch& batch, StatsAxes axes, double eps) {
  if (!(eps > 0.0)) {
    throw DegenerateReductionError("masked_stats: eps must be > 0, got " + std::to_string(eps));
  }
  MaskedStats stats;
  stats.mu = group_mean(h, batch.node_mask, axes);
  Tensor diff = sub(h, stats.mu);
  Tensor var = group_mean(mul(diff, diff), batch.node_mask, axes);
  stats.sigma = sqrt(add_scalar(var, eps));
  return stats;
}

Tensor standardize(const Tensor& h, const MaskedStats& stats, const Tensor* gamma, const Tensor* beta) {
  Tensor out = div(sub(h, stats.mu), stats.sigma);
  if (gamma != nullptr) out = scale_channels(out, *gamma);
  if (beta != nullptr) out = add_channels(out, *beta);
  return out;
}

namespace {

Tensor remask(const Tensor& h, const GraphBatch& batch) {
  if (!batch.padded) return h;
  return mul(h, batch.mask_channels(h.dim(2)));
}

// out[b,n,c] = x[b,n,col] for a [B,n,D] tensor x; gradient folds back into
// the selected column.
Tensor bcast_last_column(const Tensor& x, int64_t col, int64_t channels) {
  const int64_t d = x.dim(2);
  auto kernel = [col, channels, d](const Tensor& xx) {
    Tensor o({xx.dim(0), xx.dim(1), channels});
    const int64_t rows = xx.size() / d;
    for (int64_t i = 0; i < rows; ++i) {
      const double v = xx.data()[i * d + col];
      for (int64_t c = 0; c < channels; ++c) o.data()[i * channels + c] = v;
    }
    return o;
  };
  Tensor out = kernel(x);
  Tape* tape = joint_tape({&x});
  if (tape != nullptr) {
    int id = tape->record(
        "bcast_last_column", {x.node()}, out,
        [kernel](const Tape::ParentValues& p) { return kernel(*p[0]); },
        [col, channels, d](const Tape::ParentValues& p, const Tensor&, const Tensor& g) {
          Tensor gx(p[0]->shape());
          const int64_t rows = gx.size() / d;
          for (int64_t i = 0; i < rows; ++i) {
            double acc = 0.0;
            for (int64_t c = 0; c < channels; ++c) acc += g.data()[i * channels + c];
            gx.data()[i * d + col] = acc;
          }
          return std::vector<Tensor>{std::move(gx)};
        });
    out.bind(tape, id);
  }
  return out;
}

// x scaled by entry `idx` of the 1-D tensor `weights`.
Tensor scale_by_entry(const Tensor& x, const Tensor& weights, int64_t idx) {
  auto kernel = [idx](const Tensor& xx, const Tensor& ww) {
    Tensor o(xx.shape());
    const double w = ww.data()[idx];
    for (int64_t i = 0; i < o.size(); ++i) o.data()[i] = xx.data()[i] * w;
    return o;
  };
  Tensor out = kernel(x, weights);
  Tape* tape = joint_tape({&x, &weights});
  if (tape != nullptr) {
    int id = tape->record(
        "scale_by_entry", {tape->ensure(x), tape->ensure(weights)}, out,
        [kernel](const Tape::ParentValues& p) { return kernel(*p[0], *p[1]); },
        [idx](const Tape::ParentValues& p, const Tensor&, const Tensor& g) {
          Tensor gx(p[0]->shape());
          Tensor gw(p[1]->shape());
          const double w = p[1]->data()[idx];
          double acc = 0.0;
          for (int64_t i = 0; i < g.size(); ++i) {
            gx.data()[i] = g.data()[i] * w;
            acc += g.data()[i] * p[0]->data()[i];
          }
          gw.data()[idx] = acc;
          return std::vector<Tensor>{std::move(gx), std::move(gw)};
        });
    out.bind(tape, id);
  }
  return out;
}

struct NeighborLists {
  std::vector<std::vector<int64_t>> adj;  // flattened (b * n_max + i) -> neighbors
  std::vector<int64_t> degree;
};

// shared ownership: the tape closures must outlive the calling scope
std::shared_ptr<const NeighborLists> neighbor_lists(const GraphBatch& batch) {
  auto lists = std::make_shared<NeighborLists>();
  lists->adj.resize(static_cast<size_t>(batch.batch_size * batch.n_max));
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    for (auto [u, v] : batch.edges[static_cast<size_t>(b)]) {
      lists->adj[static_cast<size_t>(b * batch.n_max + u)].push_back(v);
      if (u != v) lists->adj[static_cast<size_t>(b * batch.n_max + v)].push_back(u);
    }
  }
  lists->degree.reserve(lists->adj.size());
  for (const auto& row : lists->adj) lists->degree.push_back(static_cast<int64_t>(row.size()));
  return lists;
}

Tensor adjacency_mean_kernel(const Tensor& h, const GraphBatch& batch, const NeighborLists& lists) {
  const int64_t n = batch.n_max, c = h.dim(2);
  Tensor out(h.shape());
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    for (int64_t i = 0; i < n; ++i) {
      if (batch.node_mask.at(b, i) == 0.0) continue;
      const auto& nbrs = lists.adj[static_cast<size_t>(b * n + i)];
      if (nbrs.empty()) continue;
      double acc = 0.0;
      for (int64_t u : nbrs) {
        for (int64_t j = 0; j < c; ++j) acc += h.at(b, u, j);
      }
      const double mu = acc / static_cast<double>(static_cast<int64_t>(nbrs.size()) * c);
      for (int64_t j = 0; j < c; ++j) out.at(b, i, j) = mu;
    }
  }
  return out;
}

// Two-pass variance over the same neighborhoods, given the broadcast mean.
Tensor adjacency_var_kernel(const Tensor& h, const GraphBatch& batch, const NeighborLists& lists,
                            const Tensor& mu) {
  const int64_t n = batch.n_max, c = h.dim(2);
  Tensor out(h.shape());
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    for (int64_t i = 0; i < n; ++i) {
      if (batch.node_mask.at(b, i) == 0.0) continue;
      const auto& nbrs = lists.adj[static_cast<size_t>(b * n + i)];
      if (nbrs.empty()) continue;
      const double m = mu.at(b, i, 0);
      double acc = 0.0;
      for (int64_t u : nbrs) {
        for (int64_t j = 0; j < c; ++j) {
          const double d = h.at(b, u, j) - m;
          acc += d * d;
        }
      }
      const double var = acc / static_cast<double>(static_cast<int64_t>(nbrs.size()) * c);
      for (int64_t j = 0; j < c; ++j) out.at(b, i, j) = var;
    }
  }
  return out;
}

Tensor adjacency_mean_op(const Tensor& h, const GraphBatch& batch,
                         std::shared_ptr<const NeighborLists> lists) {
  Tensor out = adjacency_mean_kernel(h, batch, *lists);
  Tape* tape = joint_tape({&h});
  if (tape == nullptr) return out;
  const GraphBatch* bp = &batch;
  std::shared_ptr<const NeighborLists> lp = std::move(lists);
  int id = tape->record(
      "adjacency_mean", {h.node()}, out,
      [bp, lp](const Tape::ParentValues& p) { return adjacency_mean_kernel(*p[0], *bp, *lp); },
      [bp, lp](const Tape::ParentValues& p, const Tensor&, const Tensor& g) {
        const int64_t n = bp->n_max, c = p[0]->dim(2);
        Tensor gx(p[0]->shape());
        for (int64_t b = 0; b < bp->batch_size; ++b) {
          for (int64_t i = 0; i < n; ++i) {
            if (bp->node_mask.at(b, i) == 0.0) continue;
            const auto& nbrs = lp->adj[static_cast<size_t>(b * n + i)];
            if (nbrs.empty()) continue;
            double gsum = 0.0;
            for (int64_t j = 0; j < c; ++j) gsum += g.at(b, i, j);
            const double w = gsum / static_cast<double>(static_cast<int64_t>(nbrs.size()) * c);
            for (int64_t u : nbrs) {
              for (int64_t j = 0; j < c; ++j) gx.at(b, u, j) += w;
            }
          }
        }
        return std::vector<Tensor>{std::move(gx)};
      });
  out.bind(tape, id);
  return out;
}

Tensor adjacency_var_op(const Tensor& h, const GraphBatch& batch,
                        std::shared_ptr<const NeighborLists> lists) {
  Tensor mu = adjacency_mean_kernel(h.detached(), batch, *lists);
  Tensor out = adjacency_var_kernel(h, batch, *lists, mu);
  Tape* tape = joint_tape({&h});
  if (tape == nullptr) return out;
  const GraphBatch* bp = &batch;
  std::shared_ptr<const NeighborLists> lp = std::move(lists);
  int id = tape->record(
      "adjacency_var", {h.node()}, out,
      [bp, lp](const Tape::ParentValues& p) {
        Tensor m = adjacency_mean_kernel(*p[0], *bp, *lp);
        return adjacency_var_kernel(*p[0], *bp, *lp, m);
      },
      // d var_v / d h_{u,j} = 2 (h_{u,j} - mu_v) / (|N(v)| C); the mean's own
      // dependence cancels because the deviations sum to zero
      [bp, lp](const Tape::ParentValues& p, const Tensor&, const Tensor& g) {
        const int64_t n = bp->n_max, c = p[0]->dim(2);
        Tensor m = adjacency_mean_kernel(*p[0], *bp, *lp);
        Tensor gx(p[0]->shape());
        for (int64_t b = 0; b < bp->batch_size; ++b) {
          for (int64_t i = 0; i < n; ++i) {
            if (bp->node_mask.at(b, i) == 0.0) continue;
            const auto& nbrs = lp->adj[static_cast<size_t>(b * n + i)];
            if (nbrs.empty()) continue;
            double gsum = 0.0;
            for (int64_t j = 0; j < c; ++j) gsum += g.at(b, i, j);
            const double w = 2.0 * gsum / static_cast<double>(static_cast<int64_t>(nbrs.size()) * c);
            const double mv = m.at(b, i, 0);
            for (int64_t u : nbrs) {
              for (int64_t j = 0; j < c; ++j) gx.at(b, u, j) += w * (p[0]->at(b, u, j) - mv);
            }
          }
        }
        return std::vector<Tensor>{std::move(gx)};
      });
  out.bind(tape, id);
  return out;
}

// Neighborhood statistics per node across all features of all neighbors.
// Isolated nodes fall back to their own per-node statistics.
MaskedStats adjacency_stats(const Tensor& h, const GraphBatch& batch, double eps,
                            const std::shared_ptr<const NeighborLists>& lists) {
  const int64_t c = h.dim(2);
  Tensor iso({batch.batch_size, batch.n_max, c});
  int64_t isolated = 0;
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    for (int64_t i = 0; i < batch.n_max; ++i) {
      if (batch.node_mask.at(b, i) == 0.0) continue;
      if (lists->degree[static_cast<size_t>(b * batch.n_max + i)] == 0) {
        ++isolated;
        for (int64_t j = 0; j < c; ++j) iso.at(b, i, j) = 1.0;
      }
    }
  }

  Tensor mu_adj = adjacency_mean_op(h, batch, lists);
  Tensor var_adj = adjacency_var_op(h, batch, lists);
  Tensor mu_self = group_mean(h, batch.node_mask, StatsAxes::Channel);
  Tensor diff_self = sub(h, mu_self);
  Tensor var_self = group_mean(mul(diff_self, diff_self), batch.node_mask, StatsAxes::Channel);

  MaskedStats stats;
  stats.mu = select(iso, mu_self, mu_adj);
  stats.sigma = sqrt(add_scalar(select(iso, var_self, var_adj), eps));
  if (isolated > 0) {
    norm_diagnostics().push_back("unitynorm: " + std::to_string(isolated) +
                                 " isolated node(s) use self statistics");
  }
  return stats;
}

}  // namespace

std::vector<std::string>& norm_diagnostics() {
  static thread_local std::vector<std::string> diags;
  return diags;
}

Tensor pairnorm(const Tensor& h, const GraphBatch& batch, double s, double eps) {
  Tensor centered = sub(h, group_mean(h, batch.node_mask, StatsAxes::Node));
  // (1/N) sum_n ||hc_n||^2 per graph, broadcast; the channel mean times C
  Tensor msn = mul_scalar(group_mean(mul(centered, centered), batch.node_mask, StatsAxes::NodeChannel),
                          static_cast<double>(h.dim(2)));
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    bool flagged = false;
    for (int64_t i = 0; i < batch.n_max && !flagged; ++i) {
      if (batch.node_mask.at(b, i) != 0.0 && msn.at(b, i, 0) < eps) {
        norm_diagnostics().push_back("pairnorm: graph " + std::to_string(b) +
                                     " has (near-)zero centered input, output forced to zero");
        flagged = true;
      }
    }
  }
  Tensor denom = sqrt(max_scalar(msn, eps));
  return remask(mul_scalar(div(centered, denom), s), batch);
}

Tensor mean_subtraction(const Tensor& h, const GraphBatch& batch) {
  return remask(sub(h, group_mean(h, batch.node_mask, StatsAxes::Node)), batch);
}

Tensor nodenorm(const Tensor& h, const GraphBatch& batch, double p, double eps) {
  Tensor mu = group_mean(h, batch.node_mask, StatsAxes::Channel);
  Tensor diff = sub(h, mu);
  Tensor var = group_mean(mul(diff, diff), batch.node_mask, StatsAxes::Channel);
  // sigma^{1/p} = (var + eps)^{1/(2p)}
  Tensor root = pow_scalar(add_scalar(var, eps), 1.0 / (2.0 * p));
  return remask(div(h, root), batch);
}

Tensor graphnorm(const Tensor& h, const GraphBatch& batch, const AffineParams& params, double eps,
                 bool affine) {
  MaskedStats stats = masked_stats(h, batch, StatsAxes::Node, eps);
  Tensor shifted = sub(h, scale_channels(stats.mu, params.alpha));
  Tensor out = div(shifted, stats.sigma);
  if (affine) {
    out = add_channels(scale_channels(out, params.gamma), params.beta);
  }
  return remask(out, batch);
}

Tensor graphsizenorm(const Tensor& h, const GraphBatch& batch, bool then_batchnorm,
                     const AffineParams* params, double eps, bool affine) {
  const int64_t c = h.dim(2);
  Tensor inv_sqrt({batch.batch_size, batch.n_max, c});
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    const double v = 1.0 / std::sqrt(static_cast<double>(batch.num_nodes[static_cast<size_t>(b)]));
    for (int64_t i = 0; i < batch.n_max; ++i) {
      if (batch.node_mask.at(b, i) == 0.0) continue;
      for (int64_t j = 0; j < c; ++j) inv_sqrt.at(b, i, j) = v;
    }
  }
  Tensor scaled = mul(h, inv_sqrt);
  if (!then_batchnorm) return scaled;
  MaskedStats stats = masked_stats(scaled, batch, StatsAxes::BatchNode, eps);
  Tensor out = standardize(scaled, stats, affine && params ? &params->gamma : nullptr,
                           affine && params ? &params->beta : nullptr);
  return remask(out, batch);
}

Tensor diffgroupnorm(const Tensor& h, const GraphBatch& batch, const AffineParams& params,
                     double lambda, double eps) {
  const int64_t d = params.cluster_w.dim(1);
  Tensor assign = softmax_lastdim(matmul(h, params.cluster_w));
  Tensor acc;
  for (int64_t i = 0; i < d; ++i) {
    Tensor weighted = mul(h, bcast_last_column(assign, i, h.dim(2)));
    MaskedStats stats = masked_stats(weighted, batch, StatsAxes::BatchNode, eps);
    Tensor bn = standardize(weighted, stats, &params.cluster_gamma[static_cast<size_t>(i)],
                            &params.cluster_beta[static_cast<size_t>(i)]);
    acc = i == 0 ? bn : add(acc, bn);
  }
  return remask(add(h, mul_scalar(acc, lambda)), batch);
}

Tensor unitynorm(const Tensor& h, const GraphBatch& batch, const AffineParams& params, double eps,
                 bool affine) {
  const Tensor* gamma = affine ? &params.gamma : nullptr;
  const Tensor* beta = affine ? &params.beta : nullptr;
  std::shared_ptr<const NeighborLists> lists = neighbor_lists(batch);
  Tensor ln = standardize(h, masked_stats(h, batch, StatsAxes::Channel, eps), gamma, beta);
  Tensor adj = standardize(h, adjacency_stats(h, batch, eps, lists), gamma, beta);
  Tensor in = standardize(h, masked_stats(h, batch, StatsAxes::Node, eps), gamma, beta);
  Tensor bn = standardize(h, masked_stats(h, batch, StatsAxes::BatchNode, eps), gamma, beta);
  Tensor out = scale_by_entry(ln, params.lambdas, 0);
  out = add(out, scale_by_entry(adj, params.lambdas, 1));
  out = add(out, scale_by_entry(in, params.lambdas, 2));
  out = add(out, scale_by_entry(bn, params.lambdas, 3));
  return remask(out, batch);
}

Tensor apply_norm(const NormSpec& spec, const AffineParams* params, const GraphBatch& batch,
                  const Tensor& h) {
  spec.validate();
  if (h.rank() != 3 || h.dim(0) != batch.batch_size || h.dim(1) != batch.n_max) {
    throw DimensionError("apply_norm: features " + shape_str(h.shape()) + " do not match batch");
  }
  const Tensor* gamma = spec.affine && params ? &params->gamma : nullptr;
  const Tensor* beta = spec.affine && params ? &params->beta : nullptr;
  switch (spec.variant) {
    case NormVariant::Identity:
      return h;
    case NormVariant::BatchNorm:
      return remask(standardize(h, masked_stats(h, batch, StatsAxes::BatchNode, spec.eps), gamma, beta), batch);
    case NormVariant::InstanceNorm:
      return remask(standardize(h, masked_stats(h, batch, StatsAxes::Node, spec.eps), gamma, beta), batch);
    case NormVariant::LayerNormNode:
      return remask(standardize(h, masked_stats(h, batch, StatsAxes::Channel, spec.eps), gamma, beta), batch);
    case NormVariant::LayerNormGraph:
      return remask(standardize(h, masked_stats(h, batch, StatsAxes::NodeChannel, spec.eps), gamma, beta), batch);
    case NormVariant::PairNorm:
      return pairnorm(h, batch, spec.s, spec.eps);
    case NormVariant::MeanSubtraction:
      return mean_subtraction(h, batch);
    case NormVariant::DiffGroupNorm:
      if (params == nullptr) throw ArgumentError("diffgroupnorm requires affine params");
      return diffgroupnorm(h, batch, *params, spec.lambda, spec.eps);
    case NormVariant::NodeNorm:
      return nodenorm(h, batch, spec.p, spec.eps);
    case NormVariant::GraphNorm:
      if (params == nullptr) throw ArgumentError("graphnorm requires affine params");
      return graphnorm(h, batch, *params, spec.eps, spec.affine);
    case NormVariant::GraphSizeNorm:
      return graphsizenorm(h, batch, spec.size_norm_batchnorm, params, spec.eps, spec.affine);
    case NormVariant::UnityNorm:
      if (params == nullptr) throw ArgumentError("unitynorm requires affine params");
      return unitynorm(h, batch, *params, spec.eps, spec.affine);
  }
  throw ArgumentError("apply_norm: unhandled variant");
}

}  // namespace normlab
