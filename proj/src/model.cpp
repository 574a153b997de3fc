#include "normlab/model.hpp"

#include <set>

namespace normlab {

namespace {

std::vector<std::pair<std::string, std::vector<Tensor*>>> collect_groups(ModelStack& stack) {
  std::vector<std::pair<std::string, std::vector<Tensor*>>> groups;
  std::set<const GranolaLayer*> seen_granola;
  for (size_t i = 0; i < stack.layers.size(); ++i) {
    StackLayer& layer = stack.layers[i];
    const std::string tag = "layer" + std::to_string(i);
    if (std::holds_alternative<GraphConvLayer>(layer.gnn)) {
      groups.emplace_back(tag + ":graphconv", gnn_params(layer.gnn));
    } else {
      groups.emplace_back(tag + ":gin", gnn_params(layer.gnn));
    }
    if (layer.norm.is_granola()) {
      GranolaLayer* g = layer.norm.granola.get();
      if (seen_granola.insert(g).second) {
        groups.emplace_back(tag + ":granola_" + granola_variant_name(g->variant), g->params());
      }
    } else {
      std::vector<Tensor*> ps;
      AffineParams& ap = layer.norm.affine;
      switch (layer.norm.spec.variant) {
        case NormVariant::GraphNorm:
          ps.push_back(&ap.alpha);
          if (layer.norm.spec.affine) { ps.push_back(&ap.gamma); ps.push_back(&ap.beta); }
          break;
        case NormVariant::DiffGroupNorm:
          ps.push_back(&ap.cluster_w);
          for (Tensor& t : ap.cluster_gamma) ps.push_back(&t);
          for (Tensor& t : ap.cluster_beta) ps.push_back(&t);
          break;
        case NormVariant::UnityNorm:
          ps.push_back(&ap.lambdas);
          if (layer.norm.spec.affine) { ps.push_back(&ap.gamma); ps.push_back(&ap.beta); }
          break;
        case NormVariant::BatchNorm:
        case NormVariant::InstanceNorm:
        case NormVariant::LayerNormNode:
        case NormVariant::LayerNormGraph:
        case NormVariant::GraphSizeNorm:
          if (layer.norm.spec.affine) { ps.push_back(&ap.gamma); ps.push_back(&ap.beta); }
          break;
        default:
          break;
      }
      if (!ps.empty()) groups.emplace_back(tag + ":" + norm_variant_name(layer.norm.spec.variant), ps);
    }
  }
  if (stack.readout) groups.emplace_back("readout", stack.readout->params());
  return groups;
}

}  // namespace

std::vector<Tensor*> ModelStack::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, group] : collect_groups(*this)) {
    for (Tensor* t : group) out.push_back(t);
  }
  return out;
}

std::vector<std::pair<std::string, std::vector<Tensor*>>> ModelStack::parameter_groups() {
  return collect_groups(*this);
}

void ModelStack::attach(Tape& tape) {
  for (Tensor* p : parameters()) *p = tape.leaf(std::move(*p));
}

void ModelStack::detach() {
  for (Tensor* p : parameters()) p->unbind();
}

ModelOutput model_forward(const GraphBatch& batch, const ModelStack& stack, uint64_t run_seed,
                          uint64_t step, bool frozen_rnf) {
  Tensor h = batch.features;
  for (size_t i = 0; i < stack.layers.size(); ++i) {
    const StackLayer& layer = stack.layers[i];
    Tensor pre = gnn_forward(batch, h, layer.gnn);
    Tensor normed;
    if (layer.norm.is_granola()) {
      const GranolaLayer& g = *layer.norm.granola;
      const uint64_t effective_step = (frozen_rnf || !g.rnf.resample_each_forward) ? 0 : step;
      const uint64_t seed = seed_stream(run_seed, static_cast<uint64_t>(i), effective_step);
      normed = granola_forward(batch, pre, g, seed);
    } else {
      normed = apply_norm(layer.norm.spec, &layer.norm.affine, batch, pre);
    }
    h = apply_activation(normed, layer.activation);
  }
  ModelOutput out;
  out.node_outputs = h;
  if (stack.pooling != PoolingKind::None) {
    Tensor pooled = stack.pooling == PoolingKind::Sum ? sum_pool(h, batch) : mean_pool(h, batch);
    if (stack.readout) pooled = stack.readout->forward(pooled);
    out.pooled_outputs = std::move(pooled);
  }
  return out;
}

}  // namespace normlab
