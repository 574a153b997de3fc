#include "normlab/autodiff.hpp"

#include <algorithm>
#include <memory>
#include <cmath>
#include <cstring>

namespace normlab {

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

Tensor map1(const Tensor& x, double (*fn)(double)) {
  Tensor out(x.shape());
  const double* in = x.data();
  double* o = out.data();
  for (int64_t i = 0; i < x.size(); ++i) o[i] = fn(in[i]);
  return out;
}

}  // namespace

Tensor Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = "leaf";
  n.value = value.detached();
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  value.bind(this, static_cast<int>(nodes_.size()) - 1);
  return value;
}

int Tape::record(const char* op, std::vector<int> parents, const Tensor& out, ForwardFn fwd, BackwardFn bwd) {
  Node n;
  n.op = op;
  n.parents = std::move(parents);
  n.value = out.detached();
  n.forward = std::move(fwd);
  n.backward = std::move(bwd);
  for (int p : n.parents) {
    if (p < 0 || p >= static_cast<int>(nodes_.size())) {
      throw ContractError(std::string(op) + ": parent id out of order on tape");
    }
  }
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::ensure(const Tensor& t) {
  if (t.tape() == this) return t.node();
  if (t.tape() != nullptr) throw ContractError("operand belongs to a different tape");
  Node n;
  n.op = "const";
  n.value = t.detached();
  n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

GradMap Tape::backward(const Tensor& scalar_output) const {
  if (scalar_output.tape() != this) throw ContractError("backward: output is not on this tape");
  if (scalar_output.size() != 1) {
    throw ContractError("backward: output must be scalar, got shape " + shape_str(scalar_output.shape()));
  }
  const int root = scalar_output.node();
  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<size_t>(root)] = Tensor::full(nodes_[static_cast<size_t>(root)].value.shape(), 1.0);

  for (int i = root; i >= 0; --i) {
    const Node& n = nodes_[static_cast<size_t>(i)];
    Tensor& g = grads[static_cast<size_t>(i)];
    if (g.empty() || n.parents.empty()) continue;
    ParentValues pvals;
    pvals.reserve(n.parents.size());
    for (int p : n.parents) pvals.push_back(&nodes_[static_cast<size_t>(p)].value);
    std::vector<Tensor> pgrads = n.backward(pvals, n.value, g);
    if (pgrads.size() != n.parents.size()) {
      throw ContractError(std::string(n.op) + ": backward returned wrong number of gradients");
    }
    for (size_t k = 0; k < pgrads.size(); ++k) {
      if (pgrads[k].empty()) continue;
      Tensor& acc = grads[static_cast<size_t>(n.parents[k])];
      if (acc.empty()) {
        acc = std::move(pgrads[k]);
      } else {
        double* a = acc.data();
        const double* b = pgrads[k].data();
        for (int64_t j = 0; j < acc.size(); ++j) a[j] += b[j];
      }
    }
  }

  GradMap out;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (!n.parents.empty() || !n.requires_grad) continue;
    Tensor& g = grads[i];
    out[static_cast<int>(i)] = g.empty() ? Tensor::zeros(n.value.shape()) : std::move(g);
  }
  return out;
}

bool Tape::replay_reproduces() const {
  std::vector<Tensor> vals(nodes_.size());
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.parents.empty()) {
      vals[i] = n.value;
      continue;
    }
    ParentValues pvals;
    pvals.reserve(n.parents.size());
    for (int p : n.parents) pvals.push_back(&vals[static_cast<size_t>(p)]);
    vals[i] = n.forward(pvals);
    if (vals[i].shape() != n.value.shape()) return false;
    if (std::memcmp(vals[i].data(), n.value.data(), sizeof(double) * static_cast<size_t>(n.value.size())) != 0) {
      return false;
    }
  }
  return true;
}

Tape* joint_tape(std::initializer_list<const Tensor*> operands) {
  Tape* tape = nullptr;
  for (const Tensor* t : operands) {
    if (!t->tracked()) continue;
    if (tape == nullptr) {
      tape = t->tape();
    } else if (tape != t->tape()) {
      throw ContractError("operands belong to different tapes");
    }
  }
  return tape;
}

namespace {

// Shared recording helper for ops with plain per-parent backward rules.
Tensor record_op(const char* op, std::initializer_list<const Tensor*> inputs, Tensor out,
                 Tape::ForwardFn fwd, Tape::BackwardFn bwd) {
  Tape* tape = joint_tape(inputs);
  if (tape != nullptr) {
    std::vector<int> parents;
    parents.reserve(inputs.size());
    for (const Tensor* t : inputs) parents.push_back(tape->ensure(*t));
    int id = tape->record(op, std::move(parents), out, std::move(fwd), std::move(bwd));
    out.bind(tape, id);
  }
  return out;
}

Tensor ew2(const char* op, const Tensor& a, const Tensor& b, double (*fn)(double, double),
           Tape::BackwardFn bwd) {
  check_same_shape(op, a, b);
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = fn(pa[i], pb[i]);
  auto fwd = [op, fn](const Tape::ParentValues& p) {
    Tensor o(p[0]->shape());
    const double* x = p[0]->data();
    const double* y = p[1]->data();
    double* z = o.data();
    for (int64_t i = 0; i < o.size(); ++i) z[i] = fn(x[i], y[i]);
    return o;
  };
  return record_op(op, {&a, &b}, std::move(out), std::move(fwd), std::move(bwd));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return ew2(
      "add", a, b, [](double x, double y) { return x + y; },
      [](const Tape::ParentValues&, const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{g, g};
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return ew2(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](const Tape::ParentValues&, const Tensor&, const Tensor& g) {
        Tensor gb(g.shape());
        const double* pg = g.data();
        double* p = gb.data();
        for (int64_t i = 0; i < g.size(); ++i) p[i] = -pg[i];
        return std::vector<Tensor>{g, std::move(gb)};
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return ew2(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](const Tape::ParentValues& p, const Tensor&, const Tensor& g) {
        Tensor ga(g.shape()), gb(g.shape());
        const double* pg = g.data();
        const double* x = p[0]->data();
        const double* y = p[1]->data();
        for (int64_t i = 0; i < g.size(); ++i) {
          ga.data()[i] = pg[i] * y[i];
          gb.data()[i] = pg[i] * x[i];
        }
        return std::vector<Tensor>{std::move(ga), std::move(gb)};
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return ew2(
      "div", a, b, [](double x, double y) { return x / y; },
      [](const Tape::ParentValues& p, const Tensor&, const Tensor& g) {
        Tensor ga(g.shape()), gb(g.shape());
        const double* pg = g.data();
        const double* x = p[0]->data();
        const double* y = p[1]->data();
        for (int64_t i = 0; i < g.size(); ++i) {
          ga.data()[i] = pg[i] / y[i];
          gb.data()[i] = -pg[i] * x[i] / (y[i] * y[i]);
        }
        return std::vector<Tensor>{std::move(ga), std::move(gb)};
      });
}

namespace {

Tensor unary(const char* op, const Tensor& x, double (*fn)(double),
             std::function<double(double in, double out)> dfn) {
  Tensor out = map1(x, fn);
  auto fwd = [fn](const Tape::ParentValues& p) { return map1(*p[0], fn); };
  auto bwd = [dfn](const Tape::ParentValues& p, const Tensor& v, const Tensor& g) {
    Tensor gx(g.shape());
    const double* in = p[0]->data();
    const double* ov = v.data();
    const double* pg = g.data();
    for (int64_t i = 0; i < g.size(); ++i) gx.data()[i] = pg[i] * dfn(in[i], ov[i]);
    return std::vector<Tensor>{std::move(gx)};
  };
  return record_op(op, {&x}, std::move(out), std::move(fwd), std::move(bwd));
}

}  // namespace

Tensor neg(const Tensor& x) {
  return unary("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double in, double) { return in > 0.0 ? 1.0 : (in < 0.0 ? -1.0 : 0.0); });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double out) { return 0.5 / out; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double out) { return out; });
}

Tensor add_scalar(const Tensor& x, double c) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] + c;
  auto fwd = [c](const Tape::ParentValues& p) {
    Tensor o(p[0]->shape());
    for (int64_t i = 0; i < o.size(); ++i) o.data()[i] = p[0]->data()[i] + c;
    return o;
  };
  auto bwd = [](const Tape::ParentValues&, const Tensor&, const Tensor& g) {
    return std::vector<Tensor>{g};
  };
  return record_op("add_scalar", {&x}, std::move(out), std::move(fwd), std::move(bwd));
}

Tensor mul_scalar(const Tensor& x, double c) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * c;
  auto fwd = [c](const Tape::ParentValues& p) {
    Tensor o(p[0]->shape());
    for (int64_t i = 0; i < o.size(); ++i) o.data()[i] = p[0]->data()[i] * c;
    return o;
  };
  auto bwd = [c](const Tape::ParentValues&, const Tensor&, const Tensor& g) {
    Tensor gx(g.shape());
    for (int64_t i = 0; i < g.size(); ++i) gx.data()[i] = g.data()[i] * c;
    return std::vector<Tensor>{std::move(gx)};
  };
  return record_op("mul_scalar", {&x}, std::move(out), std::move(fwd), std::move(bwd));
}

Tensor pow_scalar(const Tensor& x, double p) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = std::pow(x.data()[i], p);
  auto fwd = [p](const Tape::ParentValues& pv) {
    Tensor o(pv[0]->shape());
    for (int64_t i = 0; i < o.size(); ++i) o.data()[i] = std::pow(pv[0]->data()[i], p);
    return o;
  };
  auto bwd = [p](const Tape::ParentValues& pv, const Tensor&, const Tensor& g) {
    Tensor gx(g.shape());
    for (int64_t i = 0; i < g.size(); ++i) {
      gx.data()[i] = g.data()[i] * p * std::pow(pv[0]->data()[i], p - 1.0);
    }
    return std::vector<Tensor>{std::move(gx)};
  };
  return record_op("pow_scalar", {&x}, std::move(out), std::move(fwd), std::move(bwd));
}

Tensor max_scalar(const Tensor& x, double c) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = std::max(x.data()[i], c);
  auto fwd = [c](const Tape::ParentValues& p) {
    Tensor o(p[0]->shape());
    for (int64_t i = 0; i < o.size(); ++i) o.data()[i] = std::max(p[0]->data()[i], c);
    return o;
  };
  auto bwd = [c](const Tape::ParentValues& p, const Tensor&, const Tensor& g) {
    Tensor gx(g.shape());
    for (int64_t i = 0; i < g.size(); ++i) {
      gx.data()[i] = p[0]->data()[i] > c ? g.data()[i] : 0.0;
    }
    return std::vector<Tensor>{std::move(gx)};
  };
  return record_op("max_scalar", {&x}, std::move(out), std::move(fwd), std::move(bwd));
}

Tensor select(const Tensor& cond, const Tensor& a, const Tensor& b) {
  check_same_shape("select", cond, a);
  check_same_shape("select", a, b);
  Tensor cc = cond.detached();
  auto kernel = [cc](const Tensor& x, const Tensor& y) {
    Tensor o(x.shape());
    for (int64_t i = 0; i < o.size(); ++i) {
      o.data()[i] = cc.data()[i] != 0.0 ? x.data()[i] : y.data()[i];
    }
    return o;
  };
  Tensor out = kernel(a, b);
  auto fwd = [kernel](const Tape::ParentValues& p) { return kernel(*p[0], *p[1]); };
  auto bwd = [cc](const Tape::ParentValues&, const Tensor&, const Tensor& g) {
    Tensor ga(g.shape()), gb(g.shape());
    for (int64_t i = 0; i < g.size(); ++i) {
      const bool take_a = cc.data()[i] != 0.0;
      ga.data()[i] = take_a ? g.data()[i] : 0.0;
      gb.data()[i] = take_a ? 0.0 : g.data()[i];
    }
    return std::vector<Tensor>{std::move(ga), std::move(gb)};
  };
  return record_op("select", {&a, &b}, std::move(out), std::move(fwd), std::move(bwd));
}

namespace {

// a viewed as [rows,k] times b [k,n]; rows folds any leading batch dims.
struct MatmulDims {
  int64_t rows, k, n;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2) throw DimensionError("matmul: rhs must be rank 2, got " + shape_str(b.shape()));
  if (a.rank() != 2 && a.rank() != 3) {
    throw DimensionError("matmul: lhs must be rank 2 or 3, got " + shape_str(a.shape()));
  }
  const int64_t k = a.shape().back();
  if (k != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  return {a.size() / k, k, b.dim(1)};
}

Tensor matmul_kernel(const Tensor& a, const Tensor& b) {
  const MatmulDims d = matmul_dims(a, b);
  Shape out_shape = a.shape();
  out_shape.back() = d.n;
  Tensor out(out_shape);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < d.rows; ++i) {
    for (int64_t kk = 0; kk < d.k; ++kk) {
      const double av = pa[i * d.k + kk];
      if (av == 0.0) continue;
      const double* brow = pb + kk * d.n;
      double* orow = po + i * d.n;
      for (int64_t j = 0; j < d.n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out = matmul_kernel(a, b);
  auto fwd = [](const Tape::ParentValues& p) { return matmul_kernel(*p[0], *p[1]); };
  auto bwd = [](const Tape::ParentValues& p, const Tensor&, const Tensor& g) {
    const MatmulDims d = matmul_dims(*p[0], *p[1]);
    Tensor ga(p[0]->shape());
    Tensor gb(p[1]->shape());
    const double* pg = g.data();
    const double* pa = p[0]->data();
    const double* pb = p[1]->data();
    // dA = g . B^T, dB = A^T . g (batch rows folded)
    for (int64_t i = 0; i < d.rows; ++i) {
      for (int64_t kk = 0; kk < d.k; ++kk) {
        double acc = 0.0;
        const double* grow = pg + i * d.n;
        const double* brow = pb + kk * d.n;
        for (int64_t j = 0; j < d.n; ++j) acc += grow[j] * brow[j];
        ga.data()[i * d.k + kk] = acc;
      }
    }
    for (int64_t kk = 0; kk < d.k; ++kk) {
      double* gbrow = gb.data() + kk * d.n;
      for (int64_t i = 0; i < d.rows; ++i) {
        const double av = pa[i * d.k + kk];
        if (av == 0.0) continue;
        const double* grow = pg + i * d.n;
        for (int64_t j = 0; j < d.n; ++j) gbrow[j] += av * grow[j];
      }
    }
    return std::vector<Tensor>{std::move(ga), std::move(gb)};
  };
  return record_op("matmul", {&a, &b}, std::move(out), std::move(fwd), std::move(bwd));
}

namespace {

int64_t channel_count(const char* op, const Tensor& x, const Tensor& v) {
  if (v.rank() != 1) throw DimensionError(std::string(op) + ": vector must be rank 1");
  if (x.rank() < 1 || x.shape().back() != v.dim(0)) {
    throw DimensionError(std::string(op) + ": channel width mismatch " + shape_str(x.shape()) +
                         " vs " + shape_str(v.shape()));
  }
  return v.dim(0);
}

}  // namespace

Tensor add_channels(const Tensor& x, const Tensor& bias) {
  const int64_t c = channel_count("add_channels", x, bias);
  auto kernel = [c](const Tensor& xx, const Tensor& bb) {
    Tensor o(xx.shape());
    const int64_t rows = xx.size() / c;
    for (int64_t i = 0; i < rows; ++i) {
      for (int64_t j = 0; j < c; ++j) o.data()[i * c + j] = xx.data()[i * c + j] + bb.data()[j];
    }
    return o;
  };
  Tensor out = kernel(x, bias);
  auto fwd = [kernel](const Tape::ParentValues& p) { return kernel(*p[0], *p[1]); };
  auto bwd = [c](const Tape::ParentValues& p, const Tensor&, const Tensor& g) {
    Tensor gb(p[1]->shape());
    const int64_t rows = g.size() / c;
    for (int64_t i = 0; i < rows; ++i) {
      for (int64_t j = 0; j < c; ++j) gb.data()[j] += g.data()[i * c + j];
    }
    return std::vector<Tensor>{g, std::move(gb)};
  };
  return record_op("add_channels", {&x, &bias}, std::move(out), std::move(fwd), std::move(bwd));
}

Tensor scale_channels(const Tensor& x, const Tensor& scale) {
  const int64_t c = channel_count("scale_channels", x, scale);
  auto kernel = [c](const Tensor& xx, const Tensor& ss) {
    Tensor o(xx.shape());
    const int64_t rows = xx.size() / c;
    for (int64_t i = 0; i < rows; ++i) {
      for (int64_t j = 0; j < c; ++j) o.data()[i * c + j] = xx.data()[i * c + j] * ss.data()[j];
    }
    return o;
  };
  Tensor out = kernel(x, scale);
  auto fwd = [kernel](const Tape::ParentValues& p) { return kernel(*p[0], *p[1]); };
  auto bwd = [c](const Tape::ParentValues& p, const Tensor&, const Tensor& g) {
    Tensor gx(p[0]->shape());
    Tensor gs(p[1]->shape());
    const int64_t rows = g.size() / c;
    for (int64_t i = 0; i < rows; ++i) {
      for (int64_t j = 0; j < c; ++j) {
        gx.data()[i * c + j] = g.data()[i * c + j] * p[1]->data()[j];
        gs.data()[j] += g.data()[i * c + j] * p[0]->data()[i * c + j];
      }
    }
    return std::vector<Tensor>{std::move(gx), std::move(gs)};
  };
  return record_op("scale_channels", {&x, &scale}, std::move(out), std::move(fwd), std::move(bwd));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 1) {
    throw DimensionError("concat_channels: rank mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  for (int i = 0; i + 1 < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw DimensionError("concat_channels: leading dims disagree " + shape_str(a.shape()) +
                           " vs " + shape_str(b.shape()));
    }
  }
  const int64_t ca = a.shape().back();
  const int64_t cb = b.shape().back();
  auto kernel = [ca, cb](const Tensor& xa, const Tensor& xb) {
    Shape shp = xa.shape();
    shp.back() = ca + cb;
    Tensor o(shp);
    const int64_t rows = xa.size() / ca;
    for (int64_t i = 0; i < rows; ++i) {
      for (int64_t j = 0; j < ca; ++j) o.data()[i * (ca + cb) + j] = xa.data()[i * ca + j];
      for (int64_t j = 0; j < cb; ++j) o.data()[i * (ca + cb) + ca + j] = xb.data()[i * cb + j];
    }
    return o;
  };
  Tensor out = kernel(a, b);
  auto fwd = [kernel](const Tape::ParentValues& p) { return kernel(*p[0], *p[1]); };
  auto bwd = [ca, cb](const Tape::ParentValues& p, const Tensor&, const Tensor& g) {
    Tensor ga(p[0]->shape());
    Tensor gb(p[1]->shape());
    const int64_t rows = ga.size() / ca;
    for (int64_t i = 0; i < rows; ++i) {
      for (int64_t j = 0; j < ca; ++j) ga.data()[i * ca + j] = g.data()[i * (ca + cb) + j];
      for (int64_t j = 0; j < cb; ++j) gb.data()[i * cb + j] = g.data()[i * (ca + cb) + ca + j];
    }
    return std::vector<Tensor>{std::move(ga), std::move(gb)};
  };
  return record_op("concat_channels", {&a, &b}, std::move(out), std::move(fwd), std::move(bwd));
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("softmax_lastdim: rank must be >= 1");
  const int64_t c = x.shape().back();
  auto kernel = [c](const Tensor& xx) {
    Tensor o(xx.shape());
    const int64_t rows = xx.size() / c;
    for (int64_t i = 0; i < rows; ++i) {
      const double* row = xx.data() + i * c;
      double* orow = o.data() + i * c;
      double m = row[0];
      for (int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
      double z = 0.0;
      for (int64_t j = 0; j < c; ++j) {
        orow[j] = std::exp(row[j] - m);
        z += orow[j];
      }
      for (int64_t j = 0; j < c; ++j) orow[j] /= z;
    }
    return o;
  };
  Tensor out = kernel(x);
  auto fwd = [kernel](const Tape::ParentValues& p) { return kernel(*p[0]); };
  auto bwd = [c](const Tape::ParentValues&, const Tensor& v, const Tensor& g) {
    Tensor gx(g.shape());
    const int64_t rows = g.size() / c;
    for (int64_t i = 0; i < rows; ++i) {
      const double* s = v.data() + i * c;
      const double* grow = g.data() + i * c;
      double dot = 0.0;
      for (int64_t j = 0; j < c; ++j) dot += s[j] * grow[j];
      for (int64_t j = 0; j < c; ++j) gx.data()[i * c + j] = s[j] * (grow[j] - dot);
    }
    return std::vector<Tensor>{std::move(gx)};
  };
  return record_op("softmax_lastdim", {&x}, std::move(out), std::move(fwd), std::move(bwd));
}

namespace {

struct ReducePlan {
  Shape out_shape;
  std::vector<int64_t> group_of;  // flat index -> output index
  int64_t count;                  // elements per output
};

ReducePlan make_reduce_plan(const Tensor& x, const std::vector<int>& axes) {
  if (axes.empty()) throw DegenerateReductionError("reduce: empty reduction set");
  std::vector<bool> reduced(static_cast<size_t>(x.rank()), false);
  for (int a : axes) {
    if (a < 0 || a >= x.rank()) {
      throw DimensionError("reduce: axis " + std::to_string(a) + " invalid for shape " +
                           shape_str(x.shape()));
    }
    if (reduced[static_cast<size_t>(a)]) throw ArgumentError("reduce: duplicate axis");
    reduced[static_cast<size_t>(a)] = true;
  }
  ReducePlan plan;
  plan.count = 1;
  for (int i = 0; i < x.rank(); ++i) {
    if (reduced[static_cast<size_t>(i)]) {
      plan.count *= x.dim(i);
    } else {
      plan.out_shape.push_back(x.dim(i));
    }
  }
  if (plan.out_shape.empty()) plan.out_shape.push_back(1);

  plan.group_of.resize(static_cast<size_t>(x.size()));
  std::vector<int64_t> idx(static_cast<size_t>(x.rank()), 0);
  for (int64_t flat = 0; flat < x.size(); ++flat) {
    int64_t out_idx = 0;
    for (int i = 0; i < x.rank(); ++i) {
      if (!reduced[static_cast<size_t>(i)]) out_idx = out_idx * x.dim(i) + idx[static_cast<size_t>(i)];
    }
    plan.group_of[static_cast<size_t>(flat)] = out_idx;
    for (int i = x.rank() - 1; i >= 0; --i) {
      if (++idx[static_cast<size_t>(i)] < x.dim(i)) break;
      idx[static_cast<size_t>(i)] = 0;
    }
  }
  return plan;
}

Tensor reduce_kernel(const Tensor& x, const ReducePlan& plan, ReduceKind kind) {
  Tensor sums(plan.out_shape);
  for (int64_t i = 0; i < x.size(); ++i) sums.data()[plan.group_of[static_cast<size_t>(i)]] += x.data()[i];
  if (kind == ReduceKind::Sum) return sums;
  Tensor means(plan.out_shape);
  for (int64_t i = 0; i < means.size(); ++i) means.data()[i] = sums.data()[i] / static_cast<double>(plan.count);
  if (kind == ReduceKind::Mean) return means;
  Tensor var(plan.out_shape);
  for (int64_t i = 0; i < x.size(); ++i) {
    const double d = x.data()[i] - means.data()[plan.group_of[static_cast<size_t>(i)]];
    var.data()[plan.group_of[static_cast<size_t>(i)]] += d * d;
  }
  for (int64_t i = 0; i < var.size(); ++i) var.data()[i] /= static_cast<double>(plan.count);
  return var;
}

}  // namespace

Tensor reduce(const Tensor& x, const std::vector<int>& axes, ReduceKind kind) {
  auto plan = std::make_shared<const ReducePlan>(make_reduce_plan(x, axes));
  Tensor out = reduce_kernel(x, *plan, kind);
  auto fwd = [plan, kind](const Tape::ParentValues& p) { return reduce_kernel(*p[0], *plan, kind); };
  auto bwd = [plan, kind](const Tape::ParentValues& p, const Tensor&, const Tensor& g) {
    Tensor gx(p[0]->shape());
    const double inv = 1.0 / static_cast<double>(plan->count);
    switch (kind) {
      case ReduceKind::Sum:
        for (int64_t i = 0; i < gx.size(); ++i) gx.data()[i] = g.data()[plan->group_of[static_cast<size_t>(i)]];
        break;
      case ReduceKind::Mean:
        for (int64_t i = 0; i < gx.size(); ++i) {
          gx.data()[i] = g.data()[plan->group_of[static_cast<size_t>(i)]] * inv;
        }
        break;
      case ReduceKind::Var: {
        Tensor means = reduce_kernel(*p[0], *plan, ReduceKind::Mean);
        for (int64_t i = 0; i < gx.size(); ++i) {
          const int64_t gidx = plan->group_of[static_cast<size_t>(i)];
          gx.data()[i] = g.data()[gidx] * 2.0 * (p[0]->data()[i] - means.data()[gidx]) * inv;
        }
        break;
      }
    }
    return std::vector<Tensor>{std::move(gx)};
  };
  return record_op("reduce", {&x}, std::move(out), std::move(fwd), std::move(bwd));
}

namespace {

// Disjoint group structure of a masked [B,n,C] tensor for the given axes.
struct GroupPlan {
  std::vector<int64_t> group_of;  // flat index -> group id, -1 for masked
  std::vector<int64_t> counts;
  int64_t num_groups;
};

GroupPlan make_group_plan(const Tensor& x, const Tensor& mask, StatsAxes axes) {
  if (x.rank() != 3) throw DimensionError("group_mean: expected [B,n,C], got " + shape_str(x.shape()));
  const int64_t bsz = x.dim(0), n = x.dim(1), c = x.dim(2);
  if (mask.rank() != 2 || mask.dim(0) != bsz || mask.dim(1) != n) {
    throw DimensionError("group_mean: mask shape " + shape_str(mask.shape()) +
                         " does not match " + shape_str(x.shape()));
  }
  GroupPlan plan;
  switch (axes) {
    case StatsAxes::BatchNode: plan.num_groups = c; break;
    case StatsAxes::Node: plan.num_groups = bsz * c; break;
    case StatsAxes::Channel: plan.num_groups = bsz * n; break;
    case StatsAxes::NodeChannel: plan.num_groups = bsz; break;
  }
  plan.group_of.assign(static_cast<size_t>(x.size()), -1);
  plan.counts.assign(static_cast<size_t>(plan.num_groups), 0);
  for (int64_t b = 0; b < bsz; ++b) {
    for (int64_t i = 0; i < n; ++i) {
      if (mask.at(b, i) == 0.0) continue;
      for (int64_t j = 0; j < c; ++j) {
        int64_t gid = 0;
        switch (axes) {
          case StatsAxes::BatchNode: gid = j; break;
          case StatsAxes::Node: gid = b * c + j; break;
          case StatsAxes::Channel: gid = b * n + i; break;
          case StatsAxes::NodeChannel: gid = b; break;
        }
        plan.group_of[static_cast<size_t>((b * n + i) * c + j)] = gid;
        ++plan.counts[static_cast<size_t>(gid)];
      }
    }
  }
  for (int64_t flat = 0; flat < x.size(); ++flat) {
    const int64_t gid = plan.group_of[static_cast<size_t>(flat)];
    if (gid >= 0 && plan.counts[static_cast<size_t>(gid)] == 0) {
      throw DegenerateReductionError("group_mean: empty statistics group");
    }
  }
  return plan;
}

Tensor group_mean_kernel(const Tensor& x, const GroupPlan& plan) {
  std::vector<double> sums(static_cast<size_t>(plan.num_groups), 0.0);
  for (int64_t i = 0; i < x.size(); ++i) {
    const int64_t gid = plan.group_of[static_cast<size_t>(i)];
    if (gid >= 0) sums[static_cast<size_t>(gid)] += x.data()[i];
  }
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) {
    const int64_t gid = plan.group_of[static_cast<size_t>(i)];
    if (gid >= 0) out.data()[i] = sums[static_cast<size_t>(gid)] / static_cast<double>(plan.counts[static_cast<size_t>(gid)]);
  }
  return out;
}

}  // namespace

Tensor group_mean(const Tensor& x, const Tensor& mask, StatsAxes axes) {
  auto plan = std::make_shared<const GroupPlan>(make_group_plan(x, mask, axes));
  Tensor out = group_mean_kernel(x, *plan);
  auto fwd = [plan](const Tape::ParentValues& p) { return group_mean_kernel(*p[0], *plan); };
  auto bwd = [plan](const Tape::ParentValues& p, const Tensor&, const Tensor& g) {
    std::vector<double> gsums(static_cast<size_t>(plan->num_groups), 0.0);
    for (int64_t i = 0; i < g.size(); ++i) {
      const int64_t gid = plan->group_of[static_cast<size_t>(i)];
      if (gid >= 0) gsums[static_cast<size_t>(gid)] += g.data()[i];
    }
    Tensor gx(p[0]->shape());
    for (int64_t i = 0; i < gx.size(); ++i) {
      const int64_t gid = plan->group_of[static_cast<size_t>(i)];
      if (gid >= 0) gx.data()[i] = gsums[static_cast<size_t>(gid)] / static_cast<double>(plan->counts[static_cast<size_t>(gid)]);
    }
    return std::vector<Tensor>{std::move(gx)};
  };
  return record_op("group_mean", {&x}, std::move(out), std::move(fwd), std::move(bwd));
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tape tape;
  Tensor xv = tape.leaf(x.detached());
  Tensor y = f(xv);
  if (y.size() != 1) throw ContractError("grad_check: f must be scalar-valued");
  GradMap grads = tape.backward(y);
  const Tensor& analytic = grads.at(xv.node());

  double worst = 0.0;
  Tensor probe = x.detached();
  for (int64_t i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const double up = f(probe).item();
    probe.data()[i] = orig - h;
    const double down = f(probe).item();
    probe.data()[i] = orig;
    const double central = (up - down) / (2.0 * h);
    const double a = analytic.data()[i];
    const double denom = std::max({std::fabs(a), std::fabs(central), 1e-8});
    worst = std::max(worst, std::fabs(a - central) / denom);
  }
  return worst;
}

}  // namespace normlab
