#include "normlab/granola.hpp"

#include <cmath>

namespace normlab {

GranolaVariant granola_variant_from_name(const std::string& name) {
  if (name == "full") return GranolaVariant::Full;
  if (name == "no_rnf") return GranolaVariant::NoRnf;
  if (name == "ms") return GranolaVariant::Ms;
  if (name == "rnf_norm") return GranolaVariant::RnfNormBaseline;
  throw ArgumentError("unknown granola variant: " + name);
}

std::string granola_variant_name(GranolaVariant v) {
  switch (v) {
    case GranolaVariant::Full: return "full";
    case GranolaVariant::NoRnf: return "no_rnf";
    case GranolaVariant::Ms: return "ms";
    case GranolaVariant::RnfNormBaseline: return "rnf_norm";
  }
  throw ArgumentError("unknown granola variant enum");
}

int64_t GranolaLayer::rnf_width() const {
  return rnf.k == 0 ? channels() : rnf.k;
}

GranolaLayer GranolaLayer::create(int64_t channels, GranolaVariant variant, int64_t norm_depth,
                                  GranolaStats stats, bool norm_gnn_gin, Rng& rng, int64_t k,
                                  int64_t norm_embed) {
  if (channels < 1) throw ArgumentError("granola channels must be >= 1");
  if (k < 0) throw ArgumentError("granola rnf width must be >= 1 (0 selects the channel width)");
  GranolaLayer layer;
  layer.variant = variant;
  layer.stats_mode = stats;
  layer.rnf.k = k;
  layer.f1 = Mlp::create(channels, channels, channels, rng);
  layer.f2 = Mlp::create(channels, channels, channels, rng);
  const int64_t rnf_k = k == 0 ? channels : k;
  if (variant == GranolaVariant::RnfNormBaseline) {
    if (rnf_k != channels) {
      throw ArgumentError("rnf_norm baseline requires K == C, got K = " + std::to_string(rnf_k));
    }
    return layer;
  }
  if (norm_depth < 1) throw ArgumentError("granola norm-GNN depth must be >= 1");
  if (norm_embed < 0) throw ArgumentError("granola norm-GNN embedding width must be >= 1");
  const int64_t embed = norm_embed == 0 ? channels : norm_embed;
  const int64_t in_width =
      variant == GranolaVariant::NoRnf ? channels : channels + rnf_k;
  // only the first layer sees the concatenated RNF; later layers work at the
  // embedding width and the last maps back to C
  for (int64_t d = 0; d < norm_depth; ++d) {
    const int64_t in = d == 0 ? in_width : embed;
    const int64_t out = d + 1 == norm_depth ? channels : embed;
    if (norm_gnn_gin) {
      layer.norm_gnn.emplace_back(GINLayer::create(in, out, rng));
    } else {
      layer.norm_gnn.emplace_back(GraphConvLayer::create(in, out, rng));
    }
  }
  return layer;
}

std::vector<Tensor*> GranolaLayer::params() {
  std::vector<Tensor*> out;
  if (variant != GranolaVariant::RnfNormBaseline) {
    for (GnnLayer& l : norm_gnn) {
      for (Tensor* t : gnn_params(l)) out.push_back(t);
    }
  }
  if (variant != GranolaVariant::Ms) {
    // the bias-only ablation pins gamma to zero, so f1 is inert
    if (!gamma_zero) {
      for (Tensor* t : f1.params()) out.push_back(t);
    }
    for (Tensor* t : f2.params()) out.push_back(t);
  }
  return out;
}

void GranolaLayer::validate(int64_t feature_width) const {
  if (!(eps > 0.0)) throw DegenerateReductionError("granola eps must be > 0");
  if (feature_width != channels()) {
    throw DimensionError("granola layer width " + std::to_string(channels()) +
                         " does not match features of width " + std::to_string(feature_width));
  }
  if (variant == GranolaVariant::NoRnf || variant == GranolaVariant::Full ||
      variant == GranolaVariant::Ms) {
    if (norm_gnn.empty()) throw ArgumentError("granola norm-GNN is empty");
    const int64_t expect =
        variant == GranolaVariant::NoRnf ? channels() : channels() + rnf_width();
    if (gnn_in_width(norm_gnn.front()) != expect) {
      throw DimensionError("granola norm-GNN first layer width " +
                           std::to_string(gnn_in_width(norm_gnn.front())) + " != " +
                           std::to_string(expect));
    }
    if (gnn_out_width(norm_gnn.back()) != channels()) {
      throw DimensionError("granola norm-GNN output width must equal C");
    }
  }
}

Tensor sample_rnf(const GraphBatch& batch, int64_t k, uint64_t seed) {
  if (k < 1) throw ArgumentError("sample_rnf: k must be >= 1");
  Tensor r({batch.batch_size, batch.n_max, k});
  Rng rng(seed);
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    for (int64_t i = 0; i < batch.n_max; ++i) {
      if (batch.node_mask.at(b, i) == 0.0) continue;
      for (int64_t j = 0; j < k; ++j) r.at(b, i, j) = rng.normal();
    }
  }
  return r;
}

Tensor norm_gnn_forward(const GraphBatch& batch, const Tensor& h_tilde, const Tensor* rnf,
                        const GranolaLayer& layer) {
  if (layer.variant == GranolaVariant::RnfNormBaseline) {
    if (rnf == nullptr) throw ArgumentError("rnf_norm baseline requires random features");
    return *rnf;
  }
  if (layer.variant != GranolaVariant::NoRnf && rnf == nullptr) {
    throw ArgumentError("norm_gnn_forward: this variant requires random node features");
  }
  Tensor z = layer.variant == GranolaVariant::NoRnf ? h_tilde : concat_channels(h_tilde, *rnf);
  for (size_t i = 0; i < layer.norm_gnn.size(); ++i) {
    z = gnn_forward(batch, z, layer.norm_gnn[i]);
    if (i + 1 < layer.norm_gnn.size()) z = apply_activation(z, layer.norm_gnn_act);
  }
  return z;
}

NodeAffine affine_from_z(const Tensor& z, const GraphBatch& batch, const GranolaLayer& layer) {
  NodeAffine out;
  if (layer.variant == GranolaVariant::Ms) {
    Tensor mean = group_mean(z, batch.node_mask, StatsAxes::Channel);
    Tensor diff = sub(z, mean);
    Tensor var = group_mean(mul(diff, diff), batch.node_mask, StatsAxes::Channel);
    if (layer.ms_swap_roles) {
      out.gamma = sqrt(add_scalar(var, layer.eps));
      out.beta = mean;
    } else {
      out.gamma = mean;
      out.beta = var;
    }
    if (layer.gamma_zero) out.gamma = Tensor::zeros(out.gamma.shape());
  } else {
    out.gamma = layer.gamma_zero ? Tensor::zeros(z.shape()) : layer.f1.forward(z);
    out.beta = layer.f2.forward(z);
  }
  return out;
}

Tensor granola_forward(const GraphBatch& batch, const Tensor& h_tilde, const GranolaLayer& layer,
                       uint64_t rnf_seed, const Tensor* injected_rnf) {
  layer.validate(h_tilde.dim(2));
  Tensor sampled;
  const Tensor* rnf = nullptr;
  if (layer.variant != GranolaVariant::NoRnf) {
    if (injected_rnf != nullptr) {
      rnf = injected_rnf;
    } else {
      sampled = sample_rnf(batch, layer.rnf_width(), rnf_seed);
      rnf = &sampled;
    }
  }
  Tensor z = norm_gnn_forward(batch, h_tilde, rnf, layer);
  NodeAffine affine = affine_from_z(z, batch, layer);
  const StatsAxes axes = layer.stats_mode == GranolaStats::LayerNormNode ? StatsAxes::Channel
                                                                         : StatsAxes::BatchNode;
  MaskedStats stats = masked_stats(h_tilde, batch, axes, layer.eps);
  Tensor standardized = div(sub(h_tilde, stats.mu), stats.sigma);
  Tensor out = layer.gamma_zero ? affine.beta : add(mul(affine.gamma, standardized), affine.beta);
  if (!batch.padded) return out;
  return mul(out, batch.mask_channels(out.dim(2)));
}

RnfDefaultConstruction default_to_rnf_weights(int64_t channels) {
  if (channels < 1) throw ArgumentError("default_to_rnf_weights: channels must be >= 1");
  const int64_t c = channels;
  RnfDefaultConstruction cons;

  // input layer duplicates X: W_self = [I I], W_neigh = 0
  cons.input_layer.w_self = Tensor({c, 2 * c});
  for (int64_t i = 0; i < c; ++i) {
    cons.input_layer.w_self.at(i, i) = 1.0;
    cons.input_layer.w_self.at(i, c + i) = 1.0;
  }
  cons.input_layer.w_neigh = Tensor({c, 2 * c});

  // first normalization layer: single GraphConv over (X (+) X (+) R) picking
  // out (X, R); f1 = 0, f2 = identity, so the layer returns X (+) R
  cons.rnf_emitter.variant = GranolaVariant::Full;
  cons.rnf_emitter.rnf.k = c;
  cons.rnf_emitter.norm_gnn_act = ActivationKind::Identity;
  {
    GraphConvLayer pick;
    pick.w_self = Tensor({3 * c, 2 * c});
    for (int64_t i = 0; i < c; ++i) {
      pick.w_self.at(c + i, i) = 1.0;          // second copy of X -> first half
      pick.w_self.at(2 * c + i, c + i) = 1.0;  // R -> second half
    }
    pick.w_neigh = Tensor({3 * c, 2 * c});
    cons.rnf_emitter.norm_gnn.emplace_back(std::move(pick));
  }
  cons.rnf_emitter.f1 = Mlp::zero_map(2 * c, 2 * c);
  cons.rnf_emitter.f2 = Mlp::identity_map(2 * c);

  // later normalization layers: keep the features, ignore the fresh RNF
  cons.passthrough.variant = GranolaVariant::Full;
  cons.passthrough.rnf.k = 2 * c;
  cons.passthrough.norm_gnn_act = ActivationKind::Identity;
  {
    GraphConvLayer keep;
    keep.w_self = Tensor({4 * c, 2 * c});
    for (int64_t i = 0; i < 2 * c; ++i) keep.w_self.at(i, i) = 1.0;
    keep.w_neigh = Tensor({4 * c, 2 * c});
    cons.passthrough.norm_gnn.emplace_back(std::move(keep));
  }
  cons.passthrough.f1 = Mlp::zero_map(2 * c, 2 * c);
  cons.passthrough.f2 = Mlp::identity_map(2 * c);

  return cons;
}

GraphBatch rnf_pe_wrap(const GraphBatch& batch, int64_t k, uint64_t seed) {
  if (k < 0) throw ArgumentError("rnf_pe_wrap: k must be >= 0");
  if (k == 0) return batch;
  Tensor r = sample_rnf(batch, k, seed);
  GraphBatch out = batch;
  const int64_t c = batch.feature_width();
  Tensor merged({batch.batch_size, batch.n_max, c + k});
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    for (int64_t i = 0; i < batch.n_max; ++i) {
      for (int64_t j = 0; j < c; ++j) merged.at(b, i, j) = batch.features.at(b, i, j);
      for (int64_t j = 0; j < k; ++j) merged.at(b, i, c + j) = r.at(b, i, j);
    }
  }
  out.features = std::move(merged);
  return out;
}

}  // namespace normlab
