// normlab command line: run experiments, generate graphs, check gradients,
// benchmark scaling, and execute the property suites.
//
// Exit codes: 0 success, 1 property failure, 2 usage/config error,
// 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "normlab/config.hpp"
#include "normlab/graph.hpp"
#include "normlab/props.hpp"
#include "normlab/train.hpp"

namespace {

using namespace normlab;

int cmd_run(const std::string& config_path, const std::string& out_path,
            const std::string& csv_path) {
  ExperimentConfig cfg = ExperimentConfig::load(config_path);
  Task task = cfg.make_task();
  ModelStack stack = cfg.make_stack();
  const auto start = std::chrono::steady_clock::now();
  TrainResult trained = train(stack, task, cfg.train);
  const auto stop = std::chrono::steady_clock::now();

  RunResults results;
  results.config = cfg.echo;
  results.history = trained.history;
  results.final_metric = trained.final_loss;
  results.metric_name = cfg.train.loss == LossKind::Mae ? "mae" : "mse";
  results.seed = cfg.seed;
  results.wall_time_ms = std::chrono::duration<double, std::milli>(stop - start).count();
  write_results(results, out_path);
  if (!csv_path.empty()) write_history_csv(trained.history, csv_path);
  std::printf("run: final %s %.6f after %zu epochs -> %s\n", results.metric_name.c_str(),
              results.final_metric, trained.history.size(), out_path.c_str());
  return 0;
}

int cmd_props(const std::string& suite, double eps_override) {
  std::vector<PropResult> results = run_property_suite(suite, eps_override);
  bool all_pass = true;
  for (const PropResult& r : results) {
    std::printf("[%s] %-32s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    all_pass = all_pass && r.pass;
  }
  if (!all_pass) {
    for (const PropResult& r : results) {
      if (!r.pass) std::fprintf(stderr, "property failed: %s\n", r.name.c_str());
    }
    return 1;
  }
  return 0;
}

int cmd_gen(const std::string& kind, const std::vector<std::string>& params,
            const std::string& out_path) {
  auto need = [&](size_t count) {
    if (params.size() != count) {
      throw ArgumentError("gen " + kind + " expects " + std::to_string(count) + " parameter(s)");
    }
  };
  Graph g;
  if (kind == "cycle") {
    need(1);
    g = generate_cycle(std::stoll(params[0]));
  } else if (kind == "path") {
    need(1);
    g = generate_path(std::stoll(params[0]));
  } else if (kind == "star") {
    need(1);
    g = generate_star(std::stoll(params[0]));
  } else if (kind == "csl") {
    need(2);
    g = generate_csl(std::stoll(params[0]), std::stoll(params[1]));
  } else if (kind == "er") {
    need(3);
    g = generate_er(std::stoll(params[0]), std::stod(params[1]),
                    static_cast<uint64_t>(std::stoull(params[2])));
  } else {
    throw ArgumentError("unknown generator kind: " + kind + " (cycle|path|star|csl|er)");
  }
  save_graph(g, out_path);
  std::printf("gen: %s with %lld nodes, %zu edges -> %s\n", kind.c_str(),
              static_cast<long long>(g.num_nodes), g.edges.size(), out_path.c_str());
  return 0;
}

int cmd_bench(const std::vector<int64_t>& sizes, const std::vector<std::string>& variants,
              int64_t channels, int64_t reps, const std::string& out_path) {
  std::vector<BenchRow> rows = timing_benchmark(variants, sizes, channels, reps, 3);
  write_bench_csv(rows, out_path);
  for (const BenchRow& row : rows) {
    std::printf("bench: %-14s n=%-6lld median %.3f ms\n", row.variant.c_str(),
                static_cast<long long>(row.nodes), row.median_ms);
  }
  std::printf("bench: wrote %s\n", out_path.c_str());
  return 0;
}

int cmd_gradcheck(const std::string& config_path) {
  ExperimentConfig cfg = ExperimentConfig::load(config_path);
  ModelStack stack = cfg.make_stack();
  GraphBatch batch = batch_graphs({generate_path(3), generate_er(6, 0.5, 97)});
  const double margin = prepare_gradcheck_point(stack, batch, cfg.seed, cfg.seed + 1);
  std::printf("gradcheck: relu kink margin %.2e\n", margin);
  double worst = 0.0;
  for (const auto& [group, err] : run_grad_suite(stack, batch, cfg.seed)) {
    std::printf("gradcheck: %-28s rel err %.3e\n", group.c_str(), err);
    worst = std::max(worst, err);
  }
  std::printf("gradcheck: worst rel err %.3e (%s)\n", worst, worst < 1e-4 ? "ok" : "TOO LARGE");
  return worst < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph normalization laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_path = "results.json", csv_path;
  CLI::App* run = app.add_subcommand("run", "train a model from a config file");
  run->add_option("config", config_path, "TOML or JSON experiment config")->required();
  run->add_option("-o,--out", out_path, "results JSON path");
  run->add_option("--csv", csv_path, "also write the loss history as CSV");

  std::string suite = "all";
  double eps_override = -1.0;
  CLI::App* props = app.add_subcommand("props", "run property suites");
  props->add_option("--suite", suite, "all|norms|granola|expressiveness|gradients|training|complexity");
  props->add_option("--eps", eps_override, "override the norm eps used by the fidelity suite");

  std::string gen_kind, gen_out = "graph.json";
  std::vector<std::string> gen_params;
  CLI::App* gen = app.add_subcommand("gen", "generate a graph as JSON");
  gen->add_option("kind", gen_kind, "cycle|path|star|csl|er")->required();
  gen->add_option("params", gen_params, "generator parameters");
  gen->add_option("-o,--out", gen_out, "output path");

  std::vector<int64_t> sizes = {1000, 2000, 4000};
  std::vector<std::string> variants = {"gin+identity", "gin+granola"};
  int64_t channels = 16, reps = 20;
  std::string bench_out = "bench.csv";
  CLI::App* bench = app.add_subcommand("bench", "forward+backward timing benchmark");
  bench->add_option("--sizes", sizes, "node counts");
  bench->add_option("--variants", variants, "gin+identity|gin+batchnorm|gin+granola");
  bench->add_option("--channels", channels, "hidden width");
  bench->add_option("--reps", reps, "timed repetitions per point");
  bench->add_option("-o,--out", bench_out, "output CSV path");

  std::string grad_config;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of a config's model");
  gradcheck->add_option("config", grad_config, "TOML or JSON experiment config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(config_path, out_path, csv_path);
    if (*props) return cmd_props(suite, eps_override);
    if (*gen) return cmd_gen(gen_kind, gen_params, gen_out);
    if (*bench) return cmd_bench(sizes, variants, channels, reps, bench_out);
    if (*gradcheck) return cmd_gradcheck(grad_config);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "argument error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
