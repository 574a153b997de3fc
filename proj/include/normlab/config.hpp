#pragma once

#include <string>

#include "json.hpp"
#include "normlab/model.hpp"
#include "normlab/train.hpp"

namespace normlab {

// Parses the supported TOML subset (tables, dotted keys, scalars, arrays of
// scalars, comments) into a json tree. Errors carry line numbers.
nlohmann::ordered_json toml_to_json(const std::string& text);

// One file fully describes a run; all randomness flows from `seed`.
struct ExperimentConfig {
  uint64_t seed = 0;

  // task
  TaskKind task_kind = TaskKind::DegreeRegression;
  int64_t task_count = 200;

  // model
  int64_t channels = 8;
  int64_t layers = 2;
  bool gnn_gin = true;
  ActivationKind activation = ActivationKind::Relu;
  PoolingKind pooling = PoolingKind::None;
  bool readout = false;

  // normalization (zoo spec; granola settings used when norm_name == "granola")
  std::string norm_name = "identity";
  NormSpec norm_spec;
  GranolaVariant granola_variant = GranolaVariant::Full;
  GranolaStats granola_stats = GranolaStats::LayerNormNode;
  int64_t granola_depth = 2;
  int64_t granola_k = 0;
  int64_t granola_embed = 0;  // 0 = channel width
  bool granola_norm_gnn_gin = true;
  bool granola_share = false;
  bool granola_gamma_zero = false;
  bool granola_ms_swap = false;
  bool granola_resample = true;

  TrainConfig train;

  nlohmann::ordered_json echo;  // parsed source, for result files

  static ExperimentConfig load(const std::string& path);  // .toml or .json
  static ExperimentConfig from_json(const nlohmann::ordered_json& j);

  Task make_task() const;
  ModelStack make_stack() const;
};

struct RunResults {
  nlohmann::ordered_json config;
  std::vector<std::pair<int64_t, double>> history;
  double final_metric = 0.0;
  std::string metric_name = "mae";
  uint64_t seed = 0;
  double wall_time_ms = 0.0;
};

// {"config":…, "history":[[epoch,loss]…], "final":{…}, "seed":…,
//  "wall_time_ms":…} with fixed field order.
std::string results_to_json(const RunResults& results);
void write_results(const RunResults& results, const std::string& path);
// CSV with header, UTF-8, LF endings.
void write_history_csv(const std::vector<std::pair<int64_t, double>>& history,
                       const std::string& path);
void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path);

}  // namespace normlab
