#include "normlab/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <limits>
#include <cmath>

#include "normlab/rng.hpp"

namespace normlab {

Task Task::degree_task() {
  Task t;
  t.kind = TaskKind::DegreeRegression;
  for (Graph g : {generate_path(3), generate_star(5)}) {
    std::vector<int64_t> deg = g.degrees();
    Tensor target({g.num_nodes});
    for (int64_t i = 0; i < g.num_nodes; ++i) target.at(i) = static_cast<double>(deg[static_cast<size_t>(i)]);
    g.node_labels = target;
    t.node_targets.push_back(std::move(target));
    t.graphs.push_back(std::move(g));
  }
  return t;
}

Task Task::pair_distinguish_task() {
  Task t;
  t.kind = TaskKind::PairDistinguish;
  t.graphs.push_back(generate_cycle(6));
  t.graphs.push_back(disjoint_union(generate_cycle(3), generate_cycle(3)));
  t.graph_targets = {0.0, 1.0};
  return t;
}

double synthetic_regression_target(const Graph& g) {
  // fixed nonlinear function of the (capped) degree histogram
  static const double kWeights[9] = {0.5, -1.0, 0.8, 1.2, -0.7, 0.3, 1.1, -0.4, 0.6};
  std::vector<double> hist(9, 0.0);
  double mean_deg = 0.0;
  for (int64_t d : g.degrees()) {
    hist[static_cast<size_t>(std::min<int64_t>(d, 8))] += 1.0;
    mean_deg += static_cast<double>(d);
  }
  mean_deg /= static_cast<double>(g.num_nodes);
  double lin = 0.0;
  for (int i = 0; i < 9; ++i) lin += kWeights[i] * hist[static_cast<size_t>(i)] / static_cast<double>(g.num_nodes);
  return std::tanh(lin) + 0.3 * (mean_deg / 4.0) * (mean_deg / 4.0);
}

Task Task::synthetic_regression(int64_t count, uint64_t seed) {
  if (count < 1) throw ArgumentError("synthetic_regression: count must be >= 1");
  Task t;
  t.kind = TaskKind::SyntheticGraphRegression;
  Rng rng = Rng(seed).fork(0x7461736bULL);
  for (int64_t i = 0; i < count; ++i) {
    const int64_t n = rng.uniform_int(8, 16);
    Graph g = generate_er(n, 0.3, rng.next_u64());
    t.graph_targets.push_back(synthetic_regression_target(g));
    t.graphs.push_back(std::move(g));
  }
  return t;
}

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  throw ArgumentError("unknown optimizer: " + name);
}

LossKind loss_from_name(const std::string& name) {
  if (name == "mae") return LossKind::Mae;
  if (name == "mse") return LossKind::Mse;
  throw ArgumentError("unknown loss: " + name);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ArgumentError("train epochs must be >= 1");
  if (lr < 0.0) throw ArgumentError("train lr must be >= 0");
  if (batch_size < 0) throw ArgumentError("train batch_size must be >= 0");
}

namespace {

Tensor masked_mean_loss(const Tensor& pred, const Tensor& target, const Tensor& mask, LossKind kind) {
  if (!pred.same_shape(target)) {
    throw DimensionError("loss: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  Tensor diff = sub(pred, target.detached());
  Tensor per = kind == LossKind::Mae ? normlab::abs(diff) : mul(diff, diff);
  double count = static_cast<double>(pred.size());
  if (!mask.empty()) {
    if (!mask.same_shape(pred)) {
      throw DimensionError("loss: mask " + shape_str(mask.shape()) + " vs prediction " +
                           shape_str(pred.shape()));
    }
    count = 0.0;
    for (int64_t i = 0; i < mask.size(); ++i) count += mask.at(i) != 0.0 ? 1.0 : 0.0;
    per = mul(per, mask.detached());
  }
  if (count == 0.0) throw DegenerateReductionError("loss: mask excludes every element");
  std::vector<int> axes(static_cast<size_t>(per.rank()));
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return mul_scalar(reduce_sum(per, axes), 1.0 / count);
}

}  // namespace

Tensor mae_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  return masked_mean_loss(pred, target, mask, LossKind::Mae);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  return masked_mean_loss(pred, target, mask, LossKind::Mse);
}

namespace {

struct PreparedBatch {
  GraphBatch batch;
  Tensor target;  // node-level: [B,n,1]; graph-level: [B,1]
  Tensor mask;    // node-level: [B,n,1]; empty for graph-level
};

std::vector<PreparedBatch> prepare_batches(const Task& task, int64_t batch_size) {
  const int64_t total = static_cast<int64_t>(task.graphs.size());
  const int64_t step = batch_size == 0 ? total : std::min(batch_size, total);
  std::vector<PreparedBatch> out;
  for (int64_t begin = 0; begin < total; begin += step) {
    const int64_t end = std::min(begin + step, total);
    std::vector<Graph> chunk(task.graphs.begin() + begin, task.graphs.begin() + end);
    PreparedBatch pb;
    pb.batch = batch_graphs(chunk);
    if (task.node_level()) {
      pb.target = Tensor({pb.batch.batch_size, pb.batch.n_max, 1});
      for (int64_t b = 0; b < pb.batch.batch_size; ++b) {
        const Tensor& t = task.node_targets[static_cast<size_t>(begin + b)];
        for (int64_t i = 0; i < t.dim(0); ++i) pb.target.at(b, i, 0) = t.at(i);
      }
      pb.mask = pb.batch.mask_channels(1);
    } else {
      pb.target = Tensor({pb.batch.batch_size, 1});
      for (int64_t b = 0; b < pb.batch.batch_size; ++b) {
        pb.target.at(b, 0) = task.graph_targets[static_cast<size_t>(begin + b)];
      }
    }
    out.push_back(std::move(pb));
  }
  return out;
}

class Optimizer {
 public:
  Optimizer(const TrainConfig& config, size_t num_params)
      : config_(config), m_(num_params), v_(num_params) {}

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
    ++t_;
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      if (config_.optimizer == OptimizerKind::Sgd) {
        for (int64_t j = 0; j < p.size(); ++j) p.data()[j] -= config_.lr * g.data()[j];
        continue;
      }
      if (m_[i].empty()) {
        m_[i] = Tensor::zeros(p.shape());
        v_[i] = Tensor::zeros(p.shape());
      }
      const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
      for (int64_t j = 0; j < p.size(); ++j) {
        m_[i].data()[j] = config_.beta1 * m_[i].data()[j] + (1.0 - config_.beta1) * g.data()[j];
        v_[i].data()[j] = config_.beta2 * v_[i].data()[j] + (1.0 - config_.beta2) * g.data()[j] * g.data()[j];
        const double mhat = m_[i].data()[j] / bc1;
        const double vhat = v_[i].data()[j] / bc2;
        p.data()[j] -= config_.lr * mhat / (std::sqrt(vhat) + config_.adam_eps);
      }
    }
  }

 private:
  TrainConfig config_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

std::string first_bad_group(ModelStack& stack) {
  for (auto& [name, group] : stack.parameter_groups()) {
    for (const Tensor* t : group) {
      if (!t->all_finite()) return name;
    }
  }
  return "activations";
}

Tensor batch_loss(const ModelOutput& out, const PreparedBatch& pb, const Task& task, LossKind kind) {
  if (task.node_level()) {
    return masked_mean_loss(out.node_outputs, pb.target, pb.mask, kind);
  }
  if (out.pooled_outputs.empty()) {
    throw ArgumentError("graph-level task requires a pooling stack");
  }
  return masked_mean_loss(out.pooled_outputs, pb.target, Tensor(), kind);
}

}  // namespace

TrainResult train(ModelStack& stack, const Task& task, const TrainConfig& config) {
  config.validate();
  if (task.graphs.empty()) throw ArgumentError("train: task has no graphs");
  std::vector<PreparedBatch> batches = prepare_batches(task, config.batch_size);

  std::vector<Tensor*> params = stack.parameters();
  Optimizer opt(config, params.size());
  TrainResult result;
  uint64_t step = 1;  // step 0 is reserved for frozen-RNF evaluation
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (const PreparedBatch& pb : batches) {
      Tape tape;
      stack.attach(tape);
      double loss_value = 0.0;
      try {
        ModelOutput out = model_forward(pb.batch, stack, config.seed, step);
        Tensor loss = batch_loss(out, pb, task, config.loss);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                             " (suspect: " + first_bad_group(stack) + ")");
        }
        GradMap grads = tape.backward(loss);
        std::vector<Tensor> grad_list;
        grad_list.reserve(params.size());
        for (Tensor* p : params) grad_list.push_back(std::move(grads.at(p->node())));
        stack.detach();
        opt.step(params, grad_list);
      } catch (...) {
        stack.detach();
        throw;
      }
      epoch_loss += loss_value;
      ++step;
    }
    result.history.emplace_back(epoch, epoch_loss / static_cast<double>(batches.size()));
  }

  // full-data evaluation with pinned RNF
  double total = 0.0;
  for (const PreparedBatch& pb : batches) {
    ModelOutput out = model_forward(pb.batch, stack, config.seed, 0, /*frozen_rnf=*/true);
    total += batch_loss(out, pb, task, config.loss).item();
  }
  result.final_loss = total / static_cast<double>(batches.size());
  return result;
}

namespace {

ModelStack make_bench_stack(const std::string& variant, int64_t channels, Rng& rng) {
  ModelStack stack;
  if (variant == "empty") return stack;  // harness floor: no layers at all
  const int64_t layers = 2;
  int64_t in = 1;
  for (int64_t i = 0; i < layers; ++i) {
    StackLayer layer;
    layer.gnn = GINLayer::create(in, channels, rng);
    if (variant == "gin+identity") {
      layer.norm.spec.variant = NormVariant::Identity;
    } else if (variant == "gin+batchnorm") {
      layer.norm.spec.variant = NormVariant::BatchNorm;
      layer.norm.affine = AffineParams::create(layer.norm.spec, channels, rng);
    } else if (variant == "gin+granola") {
      layer.norm.granola = std::make_shared<GranolaLayer>(GranolaLayer::create(
          channels, GranolaVariant::Full, 2, GranolaStats::LayerNormNode, true, rng));
    } else {
      throw ArgumentError("unknown benchmark variant: " + variant);
    }
    stack.layers.push_back(std::move(layer));
    in = channels;
  }
  return stack;
}

}  // namespace

std::vector<BenchRow> timing_benchmark(const std::vector<std::string>& variants,
                                       const std::vector<int64_t>& sizes, int64_t channels,
                                       int64_t reps, uint64_t seed) {
  if (reps < 5) throw ArgumentError("timing_benchmark: need at least 5 repetitions");
  std::vector<BenchRow> rows;
  for (const std::string& variant : variants) {
    for (int64_t n : sizes) {
      Rng rng = Rng(seed).fork(0x62656e6368ULL);
      Graph g = generate_er(n, 4.0 / static_cast<double>(n), seed + static_cast<uint64_t>(n));
      GraphBatch batch = batch_graphs({g});
      ModelStack stack = make_bench_stack(variant, channels, rng);
      Tensor target({1, n, stack.layers.empty() ? 1 : channels});

      std::vector<double> times;
      const int64_t warmup = 3;
      const bool has_params = !stack.parameters().empty();
      for (int64_t rep = 0; rep < reps + warmup; ++rep) {
        const auto start = std::chrono::steady_clock::now();
        Tape tape;
        stack.attach(tape);
        Tensor features = tape.leaf(batch.features);  // makes 0-layer stacks differentiable too
        GraphBatch probe = batch;
        probe.features = features;
        ModelOutput out = model_forward(probe, stack, seed, static_cast<uint64_t>(rep));
        Tensor diff = sub(out.node_outputs, target);
        Tensor loss = mul_scalar(reduce_sum(mul(diff, diff), {0, 1, 2}), 1.0 / static_cast<double>(n));
        GradMap grads = tape.backward(loss);
        stack.detach();
        const auto stop = std::chrono::steady_clock::now();
        if (rep >= warmup) {
          times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
        }
      }
      (void)has_params;
      std::sort(times.begin(), times.end());
      rows.push_back({variant, n, times[times.size() / 2]});
    }
  }
  return rows;
}

namespace {

std::vector<Tensor*> all_zero_params(ModelStack& stack) {
  std::vector<Tensor*> zeros;
  for (Tensor* p : stack.parameters()) {
    bool all_zero = true;
    for (int64_t i = 0; i < p->size() && all_zero; ++i) all_zero = p->data()[i] == 0.0;
    if (all_zero) zeros.push_back(p);
  }
  return zeros;
}

}  // namespace

void nudge_zero_params(ModelStack& stack, uint64_t seed) {
  Rng rng(seed);
  for (Tensor* p : all_zero_params(stack)) {
    for (int64_t i = 0; i < p->size(); ++i) p->data()[i] = rng.uniform(-0.5, 0.5);
  }
}

double min_relu_margin(ModelStack& stack, const GraphBatch& batch, uint64_t run_seed) {
  Tape tape;
  stack.attach(tape);
  double margin = std::numeric_limits<double>::infinity();
  try {
    model_forward(batch, stack, run_seed, 0, /*frozen_rnf=*/true);
    for (size_t i = 0; i < tape.size(); ++i) {
      const Tape::Node& node = tape.node(static_cast<int>(i));
      if (std::strcmp(node.op, "relu") != 0) continue;
      const Tensor& input = tape.node(node.parents.front()).value;
      for (int64_t j = 0; j < input.size(); ++j) {
        const double v = std::fabs(input.data()[j]);
        if (v > 0.0) margin = std::min(margin, v);
      }
    }
  } catch (...) {
    stack.detach();
    throw;
  }
  stack.detach();
  return margin;
}

double prepare_gradcheck_point(ModelStack& stack, const GraphBatch& batch, uint64_t run_seed,
                               uint64_t nudge_seed, double margin) {
  std::vector<Tensor*> zeros = all_zero_params(stack);
  double best = -1.0;
  for (uint64_t attempt = 0; attempt < 64; ++attempt) {
    Rng rng(nudge_seed + attempt);
    for (Tensor* p : zeros) {
      for (int64_t i = 0; i < p->size(); ++i) p->data()[i] = rng.uniform(-0.5, 0.5);
    }
    const double achieved = min_relu_margin(stack, batch, run_seed);
    best = std::max(best, achieved);
    if (achieved >= margin) return achieved;
    if (zeros.empty()) break;  // nothing to redraw
  }
  return best;
}

std::vector<std::pair<std::string, double>> run_grad_suite(ModelStack& stack,
                                                           const GraphBatch& batch,
                                                           uint64_t run_seed) {
  // fixed random target keeps the squared loss smooth and nondegenerate
  const double h = 1e-5;
  std::vector<std::pair<std::string, double>> report;
  for (auto& [name, group] : stack.parameter_groups()) {
    double worst = 0.0;
    for (Tensor* p : group) {
      Tensor base = p->detached();
      auto f = [&](const Tensor& candidate) {
        *p = candidate;
        ModelOutput out = model_forward(batch, stack, run_seed, 0, /*frozen_rnf=*/true);
        const Tensor& o = stack.pooling == PoolingKind::None ? out.node_outputs : out.pooled_outputs;
        Tensor target(o.shape());
        Rng trng = Rng(run_seed).fork(0x74676574ULL);
        for (int64_t i = 0; i < target.size(); ++i) target.data()[i] = trng.uniform(-1.0, 1.0);
        Tensor diff = sub(o, target);
        std::vector<int> axes(static_cast<size_t>(diff.rank()));
        for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
        Tensor loss = reduce_sum(mul(diff, diff), axes);
        *p = base;
        return loss;
      };

      Tape tape;
      Tensor leafed = tape.leaf(base.detached());
      GradMap grads = tape.backward(f(leafed));
      const Tensor& analytic = grads.at(leafed.node());
      Tensor probe = base.detached();
      for (int64_t i = 0; i < base.size(); ++i) {
        const double orig = probe.data()[i];
        probe.data()[i] = orig + h;
        const double up = f(probe).item();
        probe.data()[i] = orig - h;
        const double down = f(probe).item();
        probe.data()[i] = orig;
        const double central = (up - down) / (2.0 * h);
        const double a = analytic.data()[i];
        // exact invariances (a shift feeding BatchNorm, say) have a true
        // zero gradient; both routes then return only rounding noise, which
        // carries no information about the backward pass
        if (std::fabs(a) < 1e-7 && std::fabs(central) < 1e-6) continue;
        const double denom = std::max({std::fabs(a), std::fabs(central), 1e-8});
        worst = std::max(worst, std::fabs(a - central) / denom);
      }
    }
    report.emplace_back(name, worst);
  }
  return report;
}

}  // namespace normlab
