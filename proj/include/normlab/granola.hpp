#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "normlab/mpnn.hpp"
#include "normlab/norms.hpp"

namespace normlab {

enum class GranolaVariant {
  Full,             // RNF concatenated into the normalization GNN input
  NoRnf,            // normalization GNN sees only the intermediate features
  Ms,               // affine parameters are per-node mean / variance of Z
  RnfNormBaseline,  // Z := R, no message passing inside the normalization
};

GranolaVariant granola_variant_from_name(const std::string& name);
std::string granola_variant_name(GranolaVariant v);

// Which statistics the standardized term uses.
enum class GranolaStats { LayerNormNode, BatchNorm };

struct RnfConfig {
  int64_t k = 0;  // random feature width; 0 means "same as channel width"
  bool resample_each_forward = true;
};

// Graph-adaptive normalization layer: a small GNN over (features (+) RNF)
// emits per-node, per-channel affine parameters applied after a standard
// per-node (or batch) standardization.
struct GranolaLayer {
  GranolaVariant variant = GranolaVariant::Full;
  GranolaStats stats_mode = GranolaStats::LayerNormNode;
  double eps = 1e-5;
  bool gamma_zero = false;      // bias-only ablation
  bool ms_swap_roles = false;   // alternate ms mapping: beta = mean, gamma = std
  RnfConfig rnf;
  std::vector<GnnLayer> norm_gnn;
  ActivationKind norm_gnn_act = ActivationKind::Relu;  // between norm-GNN layers
  Mlp f1, f2;  // per-node C -> C maps producing gamma and beta

  // `k` = 0 picks the channel width; `norm_embed` = 0 picks the channel
  // width for the norm-GNN embedding (its first layer always sees C + K).
  static GranolaLayer create(int64_t channels, GranolaVariant variant, int64_t norm_depth,
                             GranolaStats stats, bool norm_gnn_gin, Rng& rng, int64_t k = 0,
                             int64_t norm_embed = 0);

  int64_t channels() const { return f1.out_width(); }
  int64_t rnf_width() const;
  std::vector<Tensor*> params();
  void validate(int64_t feature_width) const;
};

// Standard normal draws at valid node positions, exactly zero at masked ones.
// Draws are consumed only for valid positions, so a graph's features do not
// depend on how much padding the batch carries.
Tensor sample_rnf(const GraphBatch& batch, int64_t k, uint64_t seed);

// Z from the stacked norm-GNN layers (activation between layers, none after
// the last). `rnf` may be null for the no-rnf variant.
Tensor norm_gnn_forward(const GraphBatch& batch, const Tensor& h_tilde, const Tensor* rnf,
                        const GranolaLayer& layer);

struct NodeAffine {
  Tensor gamma;  // [B,n,C]
  Tensor beta;   // [B,n,C]
};

NodeAffine affine_from_z(const Tensor& z, const GraphBatch& batch, const GranolaLayer& layer);

// Full layer: gamma_{b,n,c} (h - mu)/sigma + beta_{b,n,c}; padded rows zero.
// `injected_rnf` pins the random features (oracles, gradient checks); when
// null they are sampled from `rnf_seed`.
Tensor granola_forward(const GraphBatch& batch, const Tensor& h_tilde, const GranolaLayer& layer,
                       uint64_t rnf_seed, const Tensor* injected_rnf = nullptr);

// Weight assignment that makes a GraphConv + Granola stack reproduce plain
// message passing over features concatenated with RNF: the input layer
// duplicates its input, the first normalization layer emits X (+) R, and
// every later normalization layer passes its input through unchanged.
struct RnfDefaultConstruction {
  GraphConvLayer input_layer;  // C -> 2C duplication
  GranolaLayer rnf_emitter;    // width 2C, K = C, returns X (+) R
  GranolaLayer passthrough;    // width 2C identity layer for later depths
};

RnfDefaultConstruction default_to_rnf_weights(int64_t channels);

// Positional-encoding baseline: concatenates sampled RNF onto the initial
// features; everything downstream is untouched. K = 0 returns the batch as-is.
GraphBatch rnf_pe_wrap(const GraphBatch& batch, int64_t k, uint64_t seed);

}  // namespace normlab
