#include "normlab/oracles.hpp"

#include <cmath>
#include <vector>

namespace normlab {
namespace oracle {

namespace {

struct Dims {
  int64_t b, n, c;
};

Dims dims_of(const GraphBatch& batch, const Tensor& h) {
  return {batch.batch_size, batch.n_max, h.dim(2)};
}

bool valid(const GraphBatch& batch, int64_t b, int64_t i) {
  return batch.node_mask.at(b, i) != 0.0;
}

// mean/std over an explicit list of (b, n, c) positions
void stats_over(const Tensor& h, const std::vector<std::array<int64_t, 3>>& cells, double eps,
                double* mu_out, double* sigma_out) {
  double mu = 0.0;
  for (const auto& cell : cells) mu += h.at(cell[0], cell[1], cell[2]);
  mu /= static_cast<double>(cells.size());
  double var = 0.0;
  for (const auto& cell : cells) {
    const double d = h.at(cell[0], cell[1], cell[2]) - mu;
    var += d * d;
  }
  var /= static_cast<double>(cells.size());
  *mu_out = mu;
  *sigma_out = std::sqrt(var + eps);
}

Tensor standardized(const GraphBatch& batch, const Tensor& h, StatsAxes axes, double eps,
                    const Tensor* gamma, const Tensor* beta) {
  const Dims d = dims_of(batch, h);
  Tensor out(h.shape());
  for (int64_t b = 0; b < d.b; ++b) {
    for (int64_t i = 0; i < d.n; ++i) {
      if (!valid(batch, b, i)) continue;
      for (int64_t c = 0; c < d.c; ++c) {
        std::vector<std::array<int64_t, 3>> cells;
        switch (axes) {
          case StatsAxes::BatchNode:
            for (int64_t b2 = 0; b2 < d.b; ++b2)
              for (int64_t i2 = 0; i2 < d.n; ++i2)
                if (valid(batch, b2, i2)) cells.push_back({b2, i2, c});
            break;
          case StatsAxes::Node:
            for (int64_t i2 = 0; i2 < d.n; ++i2)
              if (valid(batch, b, i2)) cells.push_back({b, i2, c});
            break;
          case StatsAxes::Channel:
            for (int64_t c2 = 0; c2 < d.c; ++c2) cells.push_back({b, i, c2});
            break;
          case StatsAxes::NodeChannel:
            for (int64_t i2 = 0; i2 < d.n; ++i2)
              if (valid(batch, b, i2))
                for (int64_t c2 = 0; c2 < d.c; ++c2) cells.push_back({b, i2, c2});
            break;
        }
        double mu, sigma;
        stats_over(h, cells, eps, &mu, &sigma);
        double v = (h.at(b, i, c) - mu) / sigma;
        if (gamma != nullptr) v *= gamma->at(c);
        if (beta != nullptr) v += beta->at(c);
        out.at(b, i, c) = v;
      }
    }
  }
  return out;
}

Tensor pairnorm_oracle(const GraphBatch& batch, const Tensor& h, double s, double eps) {
  const Dims d = dims_of(batch, h);
  Tensor out(h.shape());
  for (int64_t b = 0; b < d.b; ++b) {
    // per-channel mean over the graph's nodes
    std::vector<double> mu(static_cast<size_t>(d.c), 0.0);
    int64_t count = 0;
    for (int64_t i = 0; i < d.n; ++i) {
      if (!valid(batch, b, i)) continue;
      ++count;
      for (int64_t c = 0; c < d.c; ++c) mu[static_cast<size_t>(c)] += h.at(b, i, c);
    }
    for (double& m : mu) m /= static_cast<double>(count);
    double msn = 0.0;
    for (int64_t i = 0; i < d.n; ++i) {
      if (!valid(batch, b, i)) continue;
      for (int64_t c = 0; c < d.c; ++c) {
        const double hc = h.at(b, i, c) - mu[static_cast<size_t>(c)];
        msn += hc * hc;
      }
    }
    msn /= static_cast<double>(count);
    const double denom = std::sqrt(std::max(msn, eps));
    for (int64_t i = 0; i < d.n; ++i) {
      if (!valid(batch, b, i)) continue;
      for (int64_t c = 0; c < d.c; ++c) {
        out.at(b, i, c) = s * (h.at(b, i, c) - mu[static_cast<size_t>(c)]) / denom;
      }
    }
  }
  return out;
}

Tensor mean_subtraction_oracle(const GraphBatch& batch, const Tensor& h) {
  const Dims d = dims_of(batch, h);
  Tensor out(h.shape());
  for (int64_t b = 0; b < d.b; ++b) {
    for (int64_t c = 0; c < d.c; ++c) {
      double mu = 0.0;
      int64_t count = 0;
      for (int64_t i = 0; i < d.n; ++i) {
        if (!valid(batch, b, i)) continue;
        mu += h.at(b, i, c);
        ++count;
      }
      mu /= static_cast<double>(count);
      for (int64_t i = 0; i < d.n; ++i) {
        if (valid(batch, b, i)) out.at(b, i, c) = h.at(b, i, c) - mu;
      }
    }
  }
  return out;
}

Tensor nodenorm_oracle(const GraphBatch& batch, const Tensor& h, double p, double eps) {
  const Dims d = dims_of(batch, h);
  Tensor out(h.shape());
  for (int64_t b = 0; b < d.b; ++b) {
    for (int64_t i = 0; i < d.n; ++i) {
      if (!valid(batch, b, i)) continue;
      double mu = 0.0;
      for (int64_t c = 0; c < d.c; ++c) mu += h.at(b, i, c);
      mu /= static_cast<double>(d.c);
      double var = 0.0;
      for (int64_t c = 0; c < d.c; ++c) {
        const double diff = h.at(b, i, c) - mu;
        var += diff * diff;
      }
      var /= static_cast<double>(d.c);
      const double root = std::pow(var + eps, 1.0 / (2.0 * p));
      for (int64_t c = 0; c < d.c; ++c) out.at(b, i, c) = h.at(b, i, c) / root;
    }
  }
  return out;
}

Tensor graphnorm_oracle(const GraphBatch& batch, const Tensor& h, const AffineParams& ap,
                        double eps, bool affine) {
  const Dims d = dims_of(batch, h);
  Tensor out(h.shape());
  for (int64_t b = 0; b < d.b; ++b) {
    for (int64_t c = 0; c < d.c; ++c) {
      std::vector<std::array<int64_t, 3>> cells;
      for (int64_t i = 0; i < d.n; ++i)
        if (valid(batch, b, i)) cells.push_back({b, i, c});
      double mu, sigma;
      stats_over(h, cells, eps, &mu, &sigma);
      for (int64_t i = 0; i < d.n; ++i) {
        if (!valid(batch, b, i)) continue;
        double v = (h.at(b, i, c) - ap.alpha.at(c) * mu) / sigma;
        if (affine) v = ap.gamma.at(c) * v + ap.beta.at(c);
        out.at(b, i, c) = v;
      }
    }
  }
  return out;
}

Tensor graphsizenorm_oracle(const GraphBatch& batch, const Tensor& h, bool then_batchnorm,
                            const AffineParams* ap, double eps, bool affine) {
  const Dims d = dims_of(batch, h);
  Tensor scaled(h.shape());
  for (int64_t b = 0; b < d.b; ++b) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(batch.num_nodes[static_cast<size_t>(b)]));
    for (int64_t i = 0; i < d.n; ++i) {
      if (!valid(batch, b, i)) continue;
      for (int64_t c = 0; c < d.c; ++c) scaled.at(b, i, c) = h.at(b, i, c) * inv;
    }
  }
  if (!then_batchnorm) return scaled;
  return standardized(batch, scaled, StatsAxes::BatchNode, eps,
                      affine && ap ? &ap->gamma : nullptr, affine && ap ? &ap->beta : nullptr);
}

Tensor diffgroupnorm_oracle(const GraphBatch& batch, const Tensor& h, const AffineParams& ap,
                            double lambda, double eps) {
  const Dims d = dims_of(batch, h);
  const int64_t groups = ap.cluster_w.dim(1);
  // row-wise softmax of h . W
  Tensor assign({d.b, d.n, groups});
  for (int64_t b = 0; b < d.b; ++b) {
    for (int64_t i = 0; i < d.n; ++i) {
      std::vector<double> logits(static_cast<size_t>(groups), 0.0);
      for (int64_t g = 0; g < groups; ++g) {
        for (int64_t c = 0; c < d.c; ++c) logits[static_cast<size_t>(g)] += h.at(b, i, c) * ap.cluster_w.at(c, g);
      }
      double mx = logits[0];
      for (double v : logits) mx = std::max(mx, v);
      double z = 0.0;
      for (double& v : logits) {
        v = std::exp(v - mx);
        z += v;
      }
      for (int64_t g = 0; g < groups; ++g) assign.at(b, i, g) = logits[static_cast<size_t>(g)] / z;
    }
  }
  Tensor out(h.shape());
  for (int64_t b = 0; b < d.b; ++b)
    for (int64_t i = 0; i < d.n; ++i)
      if (valid(batch, b, i))
        for (int64_t c = 0; c < d.c; ++c) out.at(b, i, c) = h.at(b, i, c);
  for (int64_t g = 0; g < groups; ++g) {
    Tensor weighted(h.shape());
    for (int64_t b = 0; b < d.b; ++b)
      for (int64_t i = 0; i < d.n; ++i)
        if (valid(batch, b, i))
          for (int64_t c = 0; c < d.c; ++c) weighted.at(b, i, c) = assign.at(b, i, g) * h.at(b, i, c);
    Tensor bn = standardized(batch, weighted, StatsAxes::BatchNode, eps,
                             &ap.cluster_gamma[static_cast<size_t>(g)],
                             &ap.cluster_beta[static_cast<size_t>(g)]);
    for (int64_t b = 0; b < d.b; ++b)
      for (int64_t i = 0; i < d.n; ++i)
        if (valid(batch, b, i))
          for (int64_t c = 0; c < d.c; ++c) out.at(b, i, c) += lambda * bn.at(b, i, c);
  }
  return out;
}

Tensor adjacencynorm_oracle(const GraphBatch& batch, const Tensor& h, double eps,
                            const Tensor* gamma, const Tensor* beta) {
  const Dims d = dims_of(batch, h);
  Tensor adj = batch.adjacency_dense();
  Tensor out(h.shape());
  for (int64_t b = 0; b < d.b; ++b) {
    for (int64_t i = 0; i < d.n; ++i) {
      if (!valid(batch, b, i)) continue;
      std::vector<std::array<int64_t, 3>> cells;
      for (int64_t u = 0; u < d.n; ++u) {
        if (adj.at(b, i, u) == 0.0) continue;
        for (int64_t c = 0; c < d.c; ++c) cells.push_back({b, u, c});
      }
      if (cells.empty()) {
        // isolated node: statistics over the node itself
        for (int64_t c = 0; c < d.c; ++c) cells.push_back({b, i, c});
      }
      double mu, sigma;
      stats_over(h, cells, eps, &mu, &sigma);
      for (int64_t c = 0; c < d.c; ++c) {
        double v = (h.at(b, i, c) - mu) / sigma;
        if (gamma != nullptr) v *= gamma->at(c);
        if (beta != nullptr) v += beta->at(c);
        out.at(b, i, c) = v;
      }
    }
  }
  return out;
}

Tensor unitynorm_oracle(const GraphBatch& batch, const Tensor& h, const AffineParams& ap,
                        double eps, bool affine) {
  const Tensor* gamma = affine ? &ap.gamma : nullptr;
  const Tensor* beta = affine ? &ap.beta : nullptr;
  Tensor ln = standardized(batch, h, StatsAxes::Channel, eps, gamma, beta);
  Tensor adj = adjacencynorm_oracle(batch, h, eps, gamma, beta);
  Tensor in = standardized(batch, h, StatsAxes::Node, eps, gamma, beta);
  Tensor bn = standardized(batch, h, StatsAxes::BatchNode, eps, gamma, beta);
  Tensor out(h.shape());
  for (int64_t i = 0; i < h.size(); ++i) {
    out.data()[i] = ap.lambdas.at(0) * ln.data()[i] + ap.lambdas.at(1) * adj.data()[i] +
                    ap.lambdas.at(2) * in.data()[i] + ap.lambdas.at(3) * bn.data()[i];
  }
  return out;
}

}  // namespace

Tensor norm(const NormSpec& spec, const AffineParams* params, const GraphBatch& batch,
            const Tensor& h) {
  const Tensor* gamma = spec.affine && params ? &params->gamma : nullptr;
  const Tensor* beta = spec.affine && params ? &params->beta : nullptr;
  switch (spec.variant) {
    case NormVariant::Identity: return h.detached();
    case NormVariant::BatchNorm: return standardized(batch, h, StatsAxes::BatchNode, spec.eps, gamma, beta);
    case NormVariant::InstanceNorm: return standardized(batch, h, StatsAxes::Node, spec.eps, gamma, beta);
    case NormVariant::LayerNormNode: return standardized(batch, h, StatsAxes::Channel, spec.eps, gamma, beta);
    case NormVariant::LayerNormGraph: return standardized(batch, h, StatsAxes::NodeChannel, spec.eps, gamma, beta);
    case NormVariant::PairNorm: return pairnorm_oracle(batch, h, spec.s, spec.eps);
    case NormVariant::MeanSubtraction: return mean_subtraction_oracle(batch, h);
    case NormVariant::NodeNorm: return nodenorm_oracle(batch, h, spec.p, spec.eps);
    case NormVariant::GraphNorm: return graphnorm_oracle(batch, h, *params, spec.eps, spec.affine);
    case NormVariant::GraphSizeNorm:
      return graphsizenorm_oracle(batch, h, spec.size_norm_batchnorm, params, spec.eps, spec.affine);
    case NormVariant::DiffGroupNorm: return diffgroupnorm_oracle(batch, h, *params, spec.lambda, spec.eps);
    case NormVariant::UnityNorm: return unitynorm_oracle(batch, h, *params, spec.eps, spec.affine);
  }
  throw ArgumentError("oracle::norm: unhandled variant");
}

Tensor graphconv(const GraphBatch& batch, const Tensor& h, const Tensor& w_self,
                 const Tensor& w_neigh) {
  const Dims d = dims_of(batch, h);
  const int64_t out_c = w_self.dim(1);
  Tensor adj = batch.adjacency_dense();
  Tensor out({d.b, d.n, out_c});
  for (int64_t b = 0; b < d.b; ++b) {
    for (int64_t i = 0; i < d.n; ++i) {
      for (int64_t o = 0; o < out_c; ++o) {
        double acc = 0.0;
        for (int64_t c = 0; c < d.c; ++c) acc += h.at(b, i, c) * w_self.at(c, o);
        for (int64_t u = 0; u < d.n; ++u) {
          if (adj.at(b, i, u) == 0.0) continue;
          for (int64_t c = 0; c < d.c; ++c) acc += h.at(b, u, c) * w_neigh.at(c, o);
        }
        out.at(b, i, o) = acc;
      }
    }
  }
  return out;
}

Tensor gin(const GraphBatch& batch, const Tensor& h, double eps_gin, const Tensor& w1,
           const Tensor& b1, const Tensor& w2, const Tensor& b2, bool relu_hidden) {
  const Dims d = dims_of(batch, h);
  Tensor adj = batch.adjacency_dense();
  const int64_t hidden = w1.dim(1);
  const int64_t out_c = w2.dim(1);
  Tensor out({d.b, d.n, out_c});
  for (int64_t b = 0; b < d.b; ++b) {
    for (int64_t i = 0; i < d.n; ++i) {
      if (!valid(batch, b, i)) continue;
      std::vector<double> agg(static_cast<size_t>(d.c), 0.0);
      for (int64_t c = 0; c < d.c; ++c) agg[static_cast<size_t>(c)] = (1.0 + eps_gin) * h.at(b, i, c);
      for (int64_t u = 0; u < d.n; ++u) {
        if (adj.at(b, i, u) == 0.0) continue;
        for (int64_t c = 0; c < d.c; ++c) agg[static_cast<size_t>(c)] += h.at(b, u, c);
      }
      std::vector<double> mid(static_cast<size_t>(hidden), 0.0);
      for (int64_t m = 0; m < hidden; ++m) {
        double acc = b1.at(m);
        for (int64_t c = 0; c < d.c; ++c) acc += agg[static_cast<size_t>(c)] * w1.at(c, m);
        mid[static_cast<size_t>(m)] = relu_hidden && acc < 0.0 ? 0.0 : acc;
      }
      for (int64_t o = 0; o < out_c; ++o) {
        double acc = b2.at(o);
        for (int64_t m = 0; m < hidden; ++m) acc += mid[static_cast<size_t>(m)] * w2.at(m, o);
        out.at(b, i, o) = acc;
      }
    }
  }
  return out;
}

Tensor sum_pool(const GraphBatch& batch, const Tensor& h) {
  const Dims d = dims_of(batch, h);
  Tensor out({d.b, d.c});
  for (int64_t b = 0; b < d.b; ++b) {
    for (int64_t i = 0; i < d.n; ++i) {
      if (!valid(batch, b, i)) continue;
      for (int64_t c = 0; c < d.c; ++c) out.at(b, c) += h.at(b, i, c);
    }
  }
  return out;
}

}  // namespace oracle
}  // namespace normlab
