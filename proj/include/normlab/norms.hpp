#pragma once

#include <optional>
#include <string>
#include <vector>

#include "normlab/autodiff.hpp"
#include "normlab/graph.hpp"
#include "normlab/rng.hpp"

namespace normlab {

enum class NormVariant {
  Identity,
  BatchNorm,
  InstanceNorm,
  LayerNormNode,
  LayerNormGraph,
  PairNorm,
  MeanSubtraction,
  DiffGroupNorm,
  NodeNorm,
  GraphNorm,
  GraphSizeNorm,
  UnityNorm,
};

NormVariant norm_variant_from_name(const std::string& name);
std::string norm_variant_name(NormVariant v);
const std::vector<NormVariant>& all_norm_variants();

struct NormSpec {
  NormVariant variant = NormVariant::Identity;
  double eps = 1e-5;
  bool affine = false;
  double s = 1.0;        // PairNorm target scale
  double p = 2.0;        // NodeNorm root exponent
  double lambda = 0.01;  // DiffGroupNorm skip weight
  int64_t clusters = 4;  // DiffGroupNorm D
  // GraphSizeNorm: divide-then-BatchNorm (the documented composition) when
  // true; size division only when false.
  bool size_norm_batchnorm = true;

  void validate() const;
};

// Learnable affine state sized for one norm layer at a given channel width.
// Which members are populated depends on the variant.
struct AffineParams {
  Tensor gamma;                       // [C]
  Tensor beta;                        // [C]
  Tensor alpha;                       // [C]   GraphNorm mean scale
  Tensor cluster_w;                   // [C,D] DiffGroupNorm assignment weights
  std::vector<Tensor> cluster_gamma;  // D x [C] per-cluster BatchNorm affine
  std::vector<Tensor> cluster_beta;   // D x [C]
  Tensor lambdas;                     // [4]   UnityNorm mixture weights

  static AffineParams create(const NormSpec& spec, int64_t channels, Rng& rng);
  std::vector<Tensor*> params();
};

struct MaskedStats {
  Tensor mu;     // [B,n,C], broadcast to input shape, zero at masked slots
  Tensor sigma;  // sqrt(var + eps), same layout
};

// Masked mean / std over the requested axes, broadcast back to [B,n,C].
MaskedStats masked_stats(const Tensor& h, const GraphBatch& batch, StatsAxes axes, double eps);

// gamma_c (h - mu) / sigma + beta_c; identity affine when `affine` is null.
Tensor standardize(const Tensor& h, const MaskedStats& stats, const Tensor* gamma, const Tensor* beta);

// Individual layers (all re-zero padded rows).
Tensor pairnorm(const Tensor& h, const GraphBatch& batch, double s, double eps);
Tensor mean_subtraction(const Tensor& h, const GraphBatch& batch);
Tensor nodenorm(const Tensor& h, const GraphBatch& batch, double p, double eps);
Tensor graphnorm(const Tensor& h, const GraphBatch& batch, const AffineParams& params, double eps,
                 bool affine);
Tensor graphsizenorm(const Tensor& h, const GraphBatch& batch, bool then_batchnorm,
                     const AffineParams* params, double eps, bool affine);
Tensor diffgroupnorm(const Tensor& h, const GraphBatch& batch, const AffineParams& params,
                     double lambda, double eps);
Tensor unitynorm(const Tensor& h, const GraphBatch& batch, const AffineParams& params, double eps,
                 bool affine);

// Dispatch on spec.variant. `params` may be null for affine-free variants.
Tensor apply_norm(const NormSpec& spec, const AffineParams* params, const GraphBatch& batch,
                  const Tensor& h);

// Non-fatal notes from the layers (isolated-node fallbacks, zero-input
// guards). Thread-local; clear before calls you want to audit.
std::vector<std::string>& norm_diagnostics();

}  // namespace normlab
