#pragma once

#include "normlab/graph.hpp"
#include "normlab/norms.hpp"

namespace normlab {

// Independent loop-based recomputations of every layer equation. These
// deliberately share no kernels with the main path: plain index loops over
// the dense adjacency and the batch mask, used by the property suites and
// the unit tests as the second route of every dual-route check.
namespace oracle {

// Normalization variants, recomputed from their defining statistics.
Tensor norm(const NormSpec& spec, const AffineParams* params, const GraphBatch& batch,
            const Tensor& h);

// h W_self + A h W_neigh via the dense adjacency.
Tensor graphconv(const GraphBatch& batch, const Tensor& h, const Tensor& w_self,
                 const Tensor& w_neigh);

// MLP((1+eps) h + A h) with an explicit two-layer ReLU MLP.
Tensor gin(const GraphBatch& batch, const Tensor& h, double eps_gin, const Tensor& w1,
           const Tensor& b1, const Tensor& w2, const Tensor& b2, bool relu_hidden = true);

// Masked per-graph node sums.
Tensor sum_pool(const GraphBatch& batch, const Tensor& h);

}  // namespace oracle
}  // namespace normlab
