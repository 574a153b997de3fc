#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "normlab/norms.hpp"
#include "normlab/oracles.hpp"

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

GraphBatch single(int64_t nodes) { return batch_graphs({generate_er(nodes, 0.5, 7)}); }

}  // namespace

TEST_CASE("masked_stats hand values") {
  // batchnorm axes on a single graph with features [1, 3]
  GraphBatch batch = batch_graphs({generate_path(2)});
  Tensor h({1, 2, 1}, {1.0, 3.0});
  MaskedStats stats = masked_stats(h, batch, StatsAxes::BatchNode, 1e-12);
  CHECK(stats.mu.at(0, 0, 0) == doctest::Approx(2.0));
  CHECK(stats.sigma.at(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-9));

  // layernorm-node: node features [1,2,3] -> mu 2, var 2/3
  GraphBatch one = batch_graphs({Graph(1, {})});
  Tensor n({1, 1, 3}, {1.0, 2.0, 3.0});
  MaskedStats ln = masked_stats(n, one, StatsAxes::Channel, 1e-12);
  CHECK(ln.mu.at(0, 0, 0) == doctest::Approx(2.0));
  CHECK(ln.sigma.at(0, 0, 0) * ln.sigma.at(0, 0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-9));

  CHECK_THROWS_AS(masked_stats(h, batch, StatsAxes::BatchNode, 0.0), DegenerateReductionError);
}

TEST_CASE("instancenorm zeroes per-graph-constant features") {
  GraphBatch batch = batch_graphs({generate_cycle(4)});
  NormSpec spec;
  spec.variant = NormVariant::InstanceNorm;
  Tensor out = apply_norm(spec, nullptr, batch, batch.features);
  for (int64_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == 0.0);
}

TEST_CASE("standardize hand values") {
  GraphBatch batch = batch_graphs({generate_path(2)});
  Tensor h({1, 2, 1}, {1.0, 3.0});
  MaskedStats stats;
  stats.mu = Tensor::full({1, 2, 1}, 2.0);
  stats.sigma = Tensor::ones({1, 2, 1});
  Tensor out = standardize(h, stats, nullptr, nullptr);
  CHECK(out.at(0, 0, 0) == -1.0);
  CHECK(out.at(0, 1, 0) == 1.0);

  Tensor gamma = Tensor::full({1}, 2.0);
  Tensor beta = Tensor::full({1}, 5.0);
  Tensor affine = standardize(h, stats, &gamma, &beta);
  CHECK(affine.at(0, 0, 0) == 3.0);
  CHECK(affine.at(0, 1, 0) == 7.0);
}

TEST_CASE("pairnorm hand case and zero guard") {
  GraphBatch batch = batch_graphs({generate_path(2)});
  Tensor h({1, 2, 1}, {1.0, 3.0});
  Tensor out = pairnorm(h, batch, 1.0, 1e-5);
  CHECK(out.at(0, 0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(out.at(0, 1, 0) == doctest::Approx(1.0).epsilon(1e-9));

  norm_diagnostics().clear();
  Tensor constant = Tensor::ones({1, 2, 1});
  Tensor zeros = pairnorm(constant, batch, 1.0, 1e-5);
  CHECK(zeros.at(0, 0, 0) == 0.0);
  CHECK(zeros.at(0, 1, 0) == 0.0);
  CHECK(!norm_diagnostics().empty());
}

TEST_CASE("mean subtraction centers every channel") {
  GraphBatch batch = batch_graphs({generate_path(2)});
  Tensor h({1, 2, 1}, {1.0, 3.0});
  Tensor out = mean_subtraction(h, batch);
  CHECK(out.at(0, 0, 0) == -1.0);
  CHECK(out.at(0, 1, 0) == 1.0);

  Rng rng(3);
  GraphBatch rb = batch_graphs({generate_er(5, 0.4, 5), generate_er(3, 0.6, 6)});
  Tensor rh = random_features(rb, 3, rng);
  Tensor centered = mean_subtraction(rh, rb);
  for (int64_t b = 0; b < rb.batch_size; ++b) {
    for (int64_t c = 0; c < 3; ++c) {
      double mean = 0.0;
      int64_t count = 0;
      for (int64_t i = 0; i < rb.n_max; ++i) {
        if (rb.node_mask.at(b, i) == 0.0) continue;
        mean += centered.at(b, i, c);
        ++count;
      }
      CHECK(std::fabs(mean / static_cast<double>(count)) < 1e-12);
    }
  }
}

TEST_CASE("nodenorm p=1 hand case and p relation") {
  GraphBatch one = batch_graphs({Graph(1, {})});
  Tensor h({1, 1, 3}, {1.0, 2.0, 3.0});
  Tensor out = nodenorm(h, one, 1.0, 1e-12);
  const double sigma = std::sqrt(2.0 / 3.0 + 1e-12);
  CHECK(out.at(0, 0, 0) == doctest::Approx(1.0 / sigma).epsilon(1e-9));
  CHECK(out.at(0, 0, 1) == doctest::Approx(2.0 / sigma).epsilon(1e-9));
  CHECK(out.at(0, 0, 2) == doctest::Approx(3.0 / sigma).epsilon(1e-9));

  // p=2 output relates to p=1 by a factor sigma^{1/2}
  Tensor p2 = nodenorm(h, one, 2.0, 1e-12);
  for (int64_t c = 0; c < 3; ++c) {
    CHECK(p2.at(0, 0, c) == doctest::Approx(out.at(0, 0, c) * std::sqrt(sigma)).epsilon(1e-9));
  }
}

TEST_CASE("graphnorm reduces to instancenorm at alpha=1") {
  Rng rng(13);
  GraphBatch batch = single(5);
  Tensor h = random_features(batch, 3, rng);
  NormSpec in_spec;
  in_spec.variant = NormVariant::InstanceNorm;
  NormSpec gn_spec;
  gn_spec.variant = NormVariant::GraphNorm;
  AffineParams ap = AffineParams::create(gn_spec, 3, rng);
  CHECK(max_abs_diff(apply_norm(gn_spec, &ap, batch, h), apply_norm(in_spec, nullptr, batch, h)) <
        1e-12);

  // alpha = 0, no affine: h / sigma
  for (int64_t i = 0; i < 3; ++i) ap.alpha.at(i) = 0.0;
  Tensor got = apply_norm(gn_spec, &ap, batch, h);
  MaskedStats stats = masked_stats(h, batch, StatsAxes::Node, gn_spec.eps);
  Tensor expect = mul(div(h, stats.sigma), batch.mask_channels(3));
  CHECK(max_abs_diff(got, expect) < 1e-12);
}

TEST_CASE("graphsizenorm scales by sqrt(N)") {
  GraphBatch batch = batch_graphs({generate_cycle(4)});
  NormSpec spec;
  spec.variant = NormVariant::GraphSizeNorm;
  spec.size_norm_batchnorm = false;
  Tensor out = apply_norm(spec, nullptr, batch, batch.features);
  for (int64_t i = 0; i < 4; ++i) CHECK(out.at(0, i, 0) == doctest::Approx(0.5));

  GraphBatch one = batch_graphs({Graph(1, {})});
  Tensor h({1, 1, 2}, {0.7, -0.3});
  CHECK(max_abs_diff(apply_norm(spec, nullptr, one, h), h) == 0.0);

  // composed mode equals manual divide-then-batchnorm
  Rng rng(17);
  GraphBatch rb = batch_graphs({generate_er(5, 0.5, 70), generate_er(3, 0.5, 71)});
  Tensor rh = random_features(rb, 2, rng);
  NormSpec composed = spec;
  composed.size_norm_batchnorm = true;
  Tensor got = apply_norm(composed, nullptr, rb, rh);
  Tensor scaled = apply_norm(spec, nullptr, rb, rh);
  NormSpec bn;
  bn.variant = NormVariant::BatchNorm;
  CHECK(max_abs_diff(got, apply_norm(bn, nullptr, rb, scaled)) < 1e-12);
}

TEST_CASE("diffgroupnorm limits") {
  Rng rng(23);
  GraphBatch batch = single(5);
  Tensor h = random_features(batch, 3, rng);

  // lambda = 0: identity
  NormSpec spec;
  spec.variant = NormVariant::DiffGroupNorm;
  spec.lambda = 0.0;
  spec.clusters = 3;
  AffineParams ap = AffineParams::create(spec, 3, rng);
  Tensor out = apply_norm(spec, &ap, batch, h);
  CHECK(max_abs_diff(out, h) < 1e-12);

  // D = 1: assignments are exactly 1, output = h + lambda * batchnorm(h)
  NormSpec spec1;
  spec1.variant = NormVariant::DiffGroupNorm;
  spec1.lambda = 0.05;
  spec1.clusters = 1;
  AffineParams ap1 = AffineParams::create(spec1, 3, rng);
  Tensor got = apply_norm(spec1, &ap1, batch, h);
  NormSpec bn;
  bn.variant = NormVariant::BatchNorm;
  bn.affine = true;
  AffineParams bnp = AffineParams::create(bn, 3, rng);
  bnp.gamma = ap1.cluster_gamma[0];
  bnp.beta = ap1.cluster_beta[0];
  Tensor expect = add(h, mul_scalar(apply_norm(bn, &bnp, batch, h), spec1.lambda));
  expect = mul(expect, batch.mask_channels(3));
  CHECK(max_abs_diff(got, expect) < 1e-12);
}

TEST_CASE("unitynorm reduction cases") {
  Rng rng(29);
  GraphBatch batch = single(6);
  Tensor h = random_features(batch, 3, rng);
  NormSpec spec;
  spec.variant = NormVariant::UnityNorm;
  AffineParams ap = AffineParams::create(spec, 3, rng);

  ap.lambdas = Tensor({4}, {1.0, 0.0, 0.0, 0.0});
  NormSpec ln;
  ln.variant = NormVariant::LayerNormNode;
  CHECK(max_abs_diff(apply_norm(spec, &ap, batch, h), apply_norm(ln, nullptr, batch, h)) < 1e-12);

  ap.lambdas = Tensor({4}, {0.0, 0.0, 0.0, 1.0});
  NormSpec bn;
  bn.variant = NormVariant::BatchNorm;
  CHECK(max_abs_diff(apply_norm(spec, &ap, batch, h), apply_norm(bn, nullptr, batch, h)) < 1e-12);
}

TEST_CASE("unitynorm isolated nodes fall back to self stats") {
  Graph g(3, {{0, 1}});  // node 2 is isolated
  GraphBatch batch = batch_graphs({g});
  Rng rng(31);
  Tensor h = random_features(batch, 3, rng);
  NormSpec spec;
  spec.variant = NormVariant::UnityNorm;
  AffineParams ap = AffineParams::create(spec, 3, rng);
  ap.lambdas = Tensor({4}, {0.0, 1.0, 0.0, 0.0});  // adjacency component only
  norm_diagnostics().clear();
  Tensor out = apply_norm(spec, &ap, batch, h);
  CHECK(!norm_diagnostics().empty());

  // isolated node standardized against its own channel stats
  double mu = (h.at(0, 2, 0) + h.at(0, 2, 1) + h.at(0, 2, 2)) / 3.0;
  double var = 0.0;
  for (int64_t c = 0; c < 3; ++c) var += (h.at(0, 2, c) - mu) * (h.at(0, 2, c) - mu);
  var /= 3.0;
  const double sigma = std::sqrt(var + spec.eps);
  for (int64_t c = 0; c < 3; ++c) {
    CHECK(out.at(0, 2, c) == doctest::Approx((h.at(0, 2, c) - mu) / sigma).epsilon(1e-9));
  }
}

TEST_CASE("every variant matches its loop oracle on random masked batches") {
  Rng rng(500);
  for (NormVariant variant : all_norm_variants()) {
    for (int trial = 0; trial < 10; ++trial) {
      const int64_t b1 = rng.uniform_int(1, 6);
      const int64_t b2 = rng.uniform_int(1, 6);
      GraphBatch batch = batch_graphs({generate_er(b1, 0.5, rng.next_u64()),
                                       generate_er(b2, 0.5, rng.next_u64())});
      const int64_t channels = rng.uniform_int(1, 4);
      Tensor h = random_features(batch, channels, rng);
      NormSpec spec;
      spec.variant = variant;
      spec.affine = trial % 2 == 0;
      spec.p = static_cast<double>(rng.uniform_int(1, 3));
      spec.s = rng.uniform(0.5, 1.5);
      spec.lambda = rng.uniform(0.0, 0.2);
      spec.clusters = rng.uniform_int(1, 3);
      spec.size_norm_batchnorm = trial % 2 == 1;
      AffineParams ap = AffineParams::create(spec, channels, rng);
      for (Tensor* t : ap.params()) {
        for (int64_t i = 0; i < t->size(); ++i) t->data()[i] = rng.uniform(-1.2, 1.2);
      }
      Tensor got = apply_norm(spec, &ap, batch, h);
      Tensor want = oracle::norm(spec, &ap, batch, h);
      CHECK(max_abs_diff(got, want) < 1e-10);
    }
  }
}

TEST_CASE("unknown variant name is rejected") {
  CHECK_THROWS_AS(norm_variant_from_name("supernorm"), ArgumentError);
  CHECK(norm_variant_from_name("pairnorm") == NormVariant::PairNorm);
  for (NormVariant v : all_norm_variants()) {
    CHECK(norm_variant_from_name(norm_variant_name(v)) == v);
  }
}

TEST_CASE("spec validation") {
  NormSpec spec;
  spec.eps = 0.0;
  CHECK_THROWS_AS(spec.validate(), DegenerateReductionError);
  spec.eps = 1e-5;
  spec.clusters = 0;
  CHECK_THROWS_AS(spec.validate(), ArgumentError);
  spec.clusters = 4;
  spec.p = 0.5;
  CHECK_THROWS_AS(spec.validate(), ArgumentError);
}
