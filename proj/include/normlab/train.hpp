#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "normlab/model.hpp"

namespace normlab {

enum class TaskKind { DegreeRegression, PairDistinguish, SyntheticGraphRegression };

struct Task {
  TaskKind kind = TaskKind::DegreeRegression;
  std::vector<Graph> graphs;
  std::vector<Tensor> node_targets;    // node-level tasks: per graph [N]
  std::vector<double> graph_targets;   // graph-level tasks: one scalar per graph

  bool node_level() const { return kind == TaskKind::DegreeRegression; }

  // path(3) + star(5) with per-node degree targets.
  static Task degree_task();
  // C6 vs two disjoint triangles labeled 0 / 1.
  static Task pair_distinguish_task();
  // `count` seeded ER graphs; the target is a fixed nonlinear function of
  // the degree histogram.
  static Task synthetic_regression(int64_t count, uint64_t seed);
};

double synthetic_regression_target(const Graph& g);

enum class OptimizerKind { Adam, Sgd };
enum class LossKind { Mae, Mse };

OptimizerKind optimizer_from_name(const std::string& name);
LossKind loss_from_name(const std::string& name);

struct TrainConfig {
  int64_t epochs = 100;
  int64_t batch_size = 0;  // 0 = single full batch
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LossKind loss = LossKind::Mae;
  uint64_t seed = 0;

  void validate() const;
};

// Masked mean absolute error; `mask` may be empty (counts every element).
Tensor mae_loss(const Tensor& pred, const Tensor& target, const Tensor& mask);
Tensor mse_loss(const Tensor& pred, const Tensor& target, const Tensor& mask);

struct TrainResult {
  std::vector<std::pair<int64_t, double>> history;  // (epoch, mean train loss)
  double final_loss = 0.0;  // full-data loss after training, RNF frozen
};

// Optimizes every trainable parameter of the stack on the task. Deterministic
// given (config.seed, task); aborts with NumericError on a non-finite loss.
TrainResult train(ModelStack& stack, const Task& task, const TrainConfig& config);

struct BenchRow {
  std::string variant;
  int64_t nodes = 0;
  double median_ms = 0.0;
};

// Forward+backward wall times on ER graphs with expected degree 4. Known
// variants: gin+identity, gin+batchnorm, gin+granola.
std::vector<BenchRow> timing_benchmark(const std::vector<std::string>& variants,
                                       const std::vector<int64_t>& sizes, int64_t channels = 16,
                                       int64_t reps = 20, uint64_t seed = 0);

// Central-difference check of every parameter group; returns (group, worst
// relative error) pairs. RNF is frozen for the duration.
std::vector<std::pair<std::string, double>> run_grad_suite(ModelStack& stack,
                                                           const GraphBatch& batch,
                                                           uint64_t run_seed);

// Replaces all-zero parameter tensors (fresh biases) with small random
// values; zero biases park relus exactly at their kinks, where central
// differences are meaningless.
void nudge_zero_params(ModelStack& stack, uint64_t seed);

// Smallest |pre-activation| over every relu recorded in one frozen forward
// (exact zeros from masked rows are ignored).
double min_relu_margin(ModelStack& stack, const GraphBatch& batch, uint64_t run_seed);

// nudge_zero_params, redrawn until every relu input sits at least `margin`
// away from its kink (or attempts run out); returns the achieved margin.
double prepare_gradcheck_point(ModelStack& stack, const GraphBatch& batch, uint64_t run_seed,
                               uint64_t nudge_seed, double margin = 1e-3);

}  // namespace normlab
