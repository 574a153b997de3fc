#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "normlab/granola.hpp"
#include "normlab/mpnn.hpp"
#include "normlab/norms.hpp"

namespace normlab {

enum class PoolingKind { None, Sum, Mean };

// One normalization slot: either a zoo layer or a (possibly shared) adaptive
// layer. Granola layers are held by shared_ptr so weight sharing across
// depths is a matter of aliasing.
struct NormSlot {
  NormSpec spec;  // used when granola == nullptr
  AffineParams affine;
  std::shared_ptr<GranolaLayer> granola;

  bool is_granola() const { return granola != nullptr; }
};

struct StackLayer {
  GnnLayer gnn;
  NormSlot norm;
  ActivationKind activation = ActivationKind::Relu;
};

// L x (GNN layer, norm, activation) with optional pooling and readout.
struct ModelStack {
  std::vector<StackLayer> layers;
  PoolingKind pooling = PoolingKind::None;
  std::optional<Mlp> readout;

  std::vector<Tensor*> parameters();
  // Parameter groups labeled by layer kind, for per-kind gradient reports.
  std::vector<std::pair<std::string, std::vector<Tensor*>>> parameter_groups();
  // Re-binds every parameter as a grad-requiring leaf of `tape`.
  void attach(Tape& tape);
  // Clears tape bindings; call before the tape goes away.
  void detach();
};

struct ModelOutput {
  Tensor node_outputs;    // [B,n,C_last]
  Tensor pooled_outputs;  // [B,C] after pooling (+ readout); empty when pooling == None
};

// Iterates H <- activation(Norm(GNN(H))) over the stack. `run_seed` and
// `step` feed the per-layer RNF streams; `frozen_rnf` pins step to 0 so
// repeated calls draw identical features.
ModelOutput model_forward(const GraphBatch& batch, const ModelStack& stack, uint64_t run_seed,
                          uint64_t step = 0, bool frozen_rnf = false);

}  // namespace normlab
