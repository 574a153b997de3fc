#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "normlab/granola.hpp"
#include "normlab/model.hpp"

using namespace normlab;

namespace {

Tensor random_features(const GraphBatch& batch, int64_t channels, Rng& rng) {
  Tensor h({batch.batch_size, batch.n_max, channels});
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    for (int64_t i = 0; i < batch.n_max; ++i) {
      if (batch.node_mask.at(b, i) == 0.0) continue;
      for (int64_t c = 0; c < channels; ++c) h.at(b, i, c) = rng.uniform(-2.0, 2.0);
    }
  }
  return h;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace

TEST_CASE("sample_rnf determinism, masking, and moments") {
  GraphBatch batch = batch_graphs({generate_path(3), generate_star(5)});
  Tensor a = sample_rnf(batch, 4, 123);
  Tensor b = sample_rnf(batch, 4, 123);
  CHECK(max_abs_diff(a, b) == 0.0);
  CHECK(max_abs_diff(a, sample_rnf(batch, 4, 124)) > 1e-6);

  for (int64_t i = 3; i < 5; ++i) {
    for (int64_t k = 0; k < 4; ++k) CHECK(a.at(0, i, k) == 0.0);
  }

  // empirical mean/std over ~1e6 draws
  GraphBatch big = batch_graphs({generate_er(1000, 0.0, 1)});
  Tensor r = sample_rnf(big, 1000, 999);
  double mean = 0.0;
  for (int64_t i = 0; i < r.size(); ++i) mean += r.data()[i];
  mean /= static_cast<double>(r.size());
  double var = 0.0;
  for (int64_t i = 0; i < r.size(); ++i) var += (r.data()[i] - mean) * (r.data()[i] - mean);
  var /= static_cast<double>(r.size());
  CHECK(std::fabs(mean) < 0.01);
  CHECK(std::fabs(std::sqrt(var) - 1.0) < 0.01);
}

TEST_CASE("norm_gnn_forward reductions") {
  Rng rng(42);
  GraphBatch batch = batch_graphs({generate_er(5, 0.6, 3)});
  const int64_t c = 3;
  Tensor h = random_features(batch, c, rng);

  // rnf_norm baseline: Z is exactly R
  GranolaLayer baseline = GranolaLayer::create(c, GranolaVariant::RnfNormBaseline, 1,
                                               GranolaStats::LayerNormNode, true, rng);
  Tensor r = sample_rnf(batch, c, 5);
  CHECK(max_abs_diff(norm_gnn_forward(batch, h, &r, baseline), r) == 0.0);

  // edge-free graph with GraphConv layers reduces to a per-node map of h (+) r
  GraphBatch lonely = batch_graphs({Graph(4, {})});
  Tensor hl = random_features(lonely, c, rng);
  GranolaLayer layer = GranolaLayer::create(c, GranolaVariant::Full, 2,
                                            GranolaStats::LayerNormNode, false, rng);
  Tensor rl = sample_rnf(lonely, layer.rnf_width(), 6);
  Tensor z = norm_gnn_forward(lonely, hl, &rl, layer);
  // manual per-node computation through the two GraphConv layers (w_neigh idle)
  Tensor cat = concat_channels(hl, rl);
  Tensor manual = matmul(cat, std::get<GraphConvLayer>(layer.norm_gnn[0]).w_self);
  manual = relu(manual);
  manual = matmul(manual, std::get<GraphConvLayer>(layer.norm_gnn[1]).w_self);
  CHECK(max_abs_diff(z, manual) < 1e-12);

  // two-layer case equals manual composition on a real graph
  Tensor z2 = norm_gnn_forward(batch, h, &r, layer);
  Tensor step = graphconv_forward(batch, concat_channels(h, r),
                                  std::get<GraphConvLayer>(layer.norm_gnn[0]));
  step = relu(step);
  step = graphconv_forward(batch, step, std::get<GraphConvLayer>(layer.norm_gnn[1]));
  CHECK(max_abs_diff(z2, step) < 1e-12);
}

TEST_CASE("affine_from_z: ms statistics and overrides") {
  Rng rng(55);
  GraphBatch batch = batch_graphs({generate_path(2)});
  GranolaLayer ms = GranolaLayer::create(2, GranolaVariant::Ms, 1, GranolaStats::LayerNormNode,
                                         true, rng);
  // z = [1, 3] per node: gamma = 2, beta = 1 broadcast over channels
  Tensor z({1, 2, 2}, {1.0, 3.0, 1.0, 3.0});
  NodeAffine affine = affine_from_z(z, batch, ms);
  for (int64_t i = 0; i < 2; ++i) {
    for (int64_t c = 0; c < 2; ++c) {
      CHECK(affine.gamma.at(0, i, c) == doctest::Approx(2.0));
      CHECK(affine.beta.at(0, i, c) == doctest::Approx(1.0));
    }
  }

  // f1 == 0, f2 == identity: (0, z)
  GranolaLayer cons = GranolaLayer::create(2, GranolaVariant::Full, 1, GranolaStats::LayerNormNode,
                                           true, rng);
  cons.f1 = Mlp::zero_map(2, 2);
  cons.f2 = Mlp::identity_map(2);
  NodeAffine a2 = affine_from_z(z, batch, cons);
  CHECK(max_abs_diff(a2.gamma, Tensor::zeros({1, 2, 2})) == 0.0);
  CHECK(max_abs_diff(a2.beta, z) == 0.0);

  // gamma-zero ablation forces gamma to zero regardless of z
  cons.f1 = Mlp::identity_map(2);
  cons.gamma_zero = true;
  NodeAffine a3 = affine_from_z(z, batch, cons);
  CHECK(max_abs_diff(a3.gamma, Tensor::zeros({1, 2, 2})) == 0.0);
}

TEST_CASE("granola reduces to layernorm-node when gamma=1, beta=0") {
  Rng rng(66);
  GraphBatch batch = batch_graphs({generate_er(6, 0.5, 8)});
  const int64_t c = 3;
  Tensor h = random_features(batch, c, rng);
  GranolaLayer layer = GranolaLayer::create(c, GranolaVariant::Full, 1,
                                            GranolaStats::LayerNormNode, true, rng);
  // f1 constant one, f2 constant zero
  layer.f1 = Mlp::zero_map(c, c);
  for (int64_t i = 0; i < c; ++i) layer.f1.b2.at(i) = 1.0;
  layer.f2 = Mlp::zero_map(c, c);
  Tensor out = granola_forward(batch, h, layer, 9);

  NormSpec ln;
  ln.variant = NormVariant::LayerNormNode;
  Tensor expect = apply_norm(ln, nullptr, batch, h);
  CHECK(max_abs_diff(out, expect) < 1e-12);
}

TEST_CASE("ms variant equals full variant with mean/var closures on shared z") {
  Rng rng(67);
  GraphBatch batch = batch_graphs({generate_er(5, 0.5, 9)});
  const int64_t c = 3;
  Tensor h = random_features(batch, c, rng);
  GranolaLayer ms = GranolaLayer::create(c, GranolaVariant::Ms, 2, GranolaStats::LayerNormNode,
                                         true, rng);
  Tensor r = sample_rnf(batch, ms.rnf_width(), 44);
  Tensor out_ms = granola_forward(batch, h, ms, 0, &r);

  // replicate by hand: z, then per-node mean/var as gamma/beta
  Tensor z = norm_gnn_forward(batch, h, &r, ms);
  Tensor mean = group_mean(z, batch.node_mask, StatsAxes::Channel);
  Tensor diff = sub(z, mean);
  Tensor var = group_mean(mul(diff, diff), batch.node_mask, StatsAxes::Channel);
  MaskedStats stats = masked_stats(h, batch, StatsAxes::Channel, ms.eps);
  Tensor expect = add(mul(mean, div(sub(h, stats.mu), stats.sigma)), var);
  expect = mul(expect, batch.mask_channels(c));
  CHECK(max_abs_diff(out_ms, expect) < 1e-12);

  // swap flag exchanges the roles (beta = mean, gamma = std)
  GranolaLayer swapped = ms;
  swapped.ms_swap_roles = true;
  Tensor out_swap = granola_forward(batch, h, swapped, 0, &r);
  Tensor expect_swap = add(mul(normlab::sqrt(add_scalar(var, ms.eps)),
                               div(sub(h, stats.mu), stats.sigma)),
                           mean);
  expect_swap = mul(expect_swap, batch.mask_channels(c));
  CHECK(max_abs_diff(out_swap, expect_swap) < 1e-12);
}

TEST_CASE("batchnorm stats mode standardizes against batch statistics") {
  Rng rng(68);
  GraphBatch batch = batch_graphs({generate_er(4, 0.5, 10), generate_er(6, 0.5, 11)});
  const int64_t c = 2;
  Tensor h = random_features(batch, c, rng);
  GranolaLayer layer = GranolaLayer::create(c, GranolaVariant::Full, 1, GranolaStats::BatchNorm,
                                            true, rng);
  layer.f1 = Mlp::zero_map(c, c);
  for (int64_t i = 0; i < c; ++i) layer.f1.b2.at(i) = 1.0;
  layer.f2 = Mlp::zero_map(c, c);
  Tensor out = granola_forward(batch, h, layer, 12);
  NormSpec bn;
  bn.variant = NormVariant::BatchNorm;
  CHECK(max_abs_diff(out, apply_norm(bn, nullptr, batch, h)) < 1e-12);
}

TEST_CASE("prop-2 construction single node hand values") {
  RnfDefaultConstruction cons = default_to_rnf_weights(1);
  Graph g(1, {});
  g.set_features(Tensor({1, 1}, {2.0}));
  GraphBatch batch = batch_graphs({g});
  Tensor r({1, 1, 1}, {0.5});
  Tensor h = graphconv_forward(batch, batch.features, cons.input_layer);
  CHECK(h.at(0, 0, 0) == 2.0);
  CHECK(h.at(0, 0, 1) == 2.0);
  Tensor out = relu(granola_forward(batch, h, cons.rnf_emitter, 0, &r));
  CHECK(out.at(0, 0, 0) == 2.0);
  CHECK(out.at(0, 0, 1) == 0.5);

  // negative feature is clipped by the activation after the norm
  g.set_features(Tensor({1, 1}, {-1.0}));
  GraphBatch nb = batch_graphs({g});
  Tensor h2 = graphconv_forward(nb, nb.features, cons.input_layer);
  Tensor out2 = relu(granola_forward(nb, h2, cons.rnf_emitter, 0, &r));
  CHECK(out2.at(0, 0, 0) == 0.0);
  CHECK(out2.at(0, 0, 1) == 0.5);
}

TEST_CASE("rnf_pe_wrap concatenates features") {
  GraphBatch batch = batch_graphs({generate_path(3)});
  GraphBatch same = rnf_pe_wrap(batch, 0, 1);
  CHECK(max_abs_diff(same.features, batch.features) == 0.0);

  GraphBatch wrapped = rnf_pe_wrap(batch, 2, 77);
  CHECK(wrapped.feature_width() == 3);
  Tensor r = sample_rnf(batch, 2, 77);
  for (int64_t i = 0; i < 3; ++i) {
    CHECK(wrapped.features.at(0, i, 0) == batch.features.at(0, i, 0));
    CHECK(wrapped.features.at(0, i, 1) == r.at(0, i, 0));
    CHECK(wrapped.features.at(0, i, 2) == r.at(0, i, 1));
  }
}

TEST_CASE("tapes through graph ops replay bit-for-bit") {
  Rng rng(73);
  GraphBatch batch = batch_graphs({generate_er(6, 0.5, 15), generate_path(3)});
  const int64_t c = 3;
  Tensor h = random_features(batch, c, rng);
  GranolaLayer layer = GranolaLayer::create(c, GranolaVariant::Full, 2,
                                            GranolaStats::LayerNormNode, true, rng);
  Tensor r = sample_rnf(batch, layer.rnf_width(), 16);
  {
    Tape tape;
    Tensor hv = tape.leaf(h.detached());
    (void)granola_forward(batch, hv, layer, 0, &r);
    CHECK(tape.replay_reproduces());
  }
  {
    NormSpec spec;
    spec.variant = NormVariant::UnityNorm;
    AffineParams ap = AffineParams::create(spec, c, rng);
    Tape tape;
    Tensor hv = tape.leaf(h.detached());
    (void)apply_norm(spec, &ap, batch, hv);
    CHECK(tape.replay_reproduces());
  }
}

TEST_CASE("granola validation rejects bad widths") {
  Rng rng(70);
  GranolaLayer layer = GranolaLayer::create(3, GranolaVariant::Full, 2,
                                            GranolaStats::LayerNormNode, true, rng);
  GraphBatch batch = batch_graphs({generate_path(3)});
  Tensor wrong({1, 3, 5});
  CHECK_THROWS_AS(granola_forward(batch, wrong, layer, 0), DimensionError);
  CHECK_THROWS_AS(GranolaLayer::create(3, GranolaVariant::RnfNormBaseline, 1,
                                       GranolaStats::LayerNormNode, true, rng, 5),
                  ArgumentError);
}

TEST_CASE("granola gradients on a 5-node graph pass the finite-difference check") {
  Rng rng(72);
  GraphBatch batch = batch_graphs({generate_er(5, 0.6, 14)});
  const int64_t c = 3;
  Tensor h = random_features(batch, c, rng);
  GranolaLayer layer = GranolaLayer::create(c, GranolaVariant::Full, 2,
                                            GranolaStats::LayerNormNode, true, rng);
  Tensor r = sample_rnf(batch, layer.rnf_width(), 5);
  Tensor target = random_features(batch, c, rng);
  for (Tensor* p : layer.params()) {
    Tensor base = p->detached();
    double err = grad_check(
        [&](const Tensor& cand) {
          *p = cand;
          Tensor out = granola_forward(batch, h, layer, 0, &r);
          Tensor diff = sub(out, target.detached());
          Tensor loss = reduce_sum(mul(diff, diff), {0, 1, 2});
          *p = base;
          return loss;
        },
        base);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("shared granola layer accumulates gradients across depths") {
  Rng rng(71);
  GraphBatch batch = batch_graphs({generate_er(5, 0.5, 13)});
  const int64_t c = 3;
  auto shared = std::make_shared<GranolaLayer>(GranolaLayer::create(
      c, GranolaVariant::NoRnf, 1, GranolaStats::LayerNormNode, true, rng));
  ModelStack stack;
  int64_t in = 1;
  for (int i = 0; i < 2; ++i) {
    StackLayer layer;
    layer.gnn = GINLayer::create(in, c, rng);
    layer.norm.granola = shared;
    stack.layers.push_back(std::move(layer));
    in = c;
  }
  // the shared parameter set appears once
  CHECK(stack.parameter_groups().size() == 3);  // 2 gins + 1 granola

  Tape tape;
  stack.attach(tape);
  ModelOutput out = model_forward(batch, stack, 3);
  Tensor loss = reduce_sum(mul(out.node_outputs, out.node_outputs), {0, 1, 2});
  GradMap grads = tape.backward(loss);
  // gradient flows into the shared weights from both depths
  Tensor* some_param = shared->params().front();
  const Tensor& g = grads.at(some_param->node());
  double norm_sq = 0.0;
  for (int64_t i = 0; i < g.size(); ++i) norm_sq += g.data()[i] * g.data()[i];
  stack.detach();
  CHECK(norm_sq > 0.0);
}
