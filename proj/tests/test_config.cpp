#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>

#include "normlab/config.hpp"

using namespace normlab;

namespace {

const char* kTomlConfig = R"(# degree-task experiment
seed = 7

[task]
kind = "degree_regression"

[model]
channels = 1
layers = 1
gnn = "graphconv"
pooling = "none"

[model.norm]
variant = "batchnorm"
affine = false
eps = 1e-5

[train]
epochs = 3
lr = 0.001
optimizer = "adam"
loss = "mae"
)";

std::string write_temp(const std::string& name, const std::string& text) {
  std::string path = std::string("/tmp/normlab_test_") + name;
  std::ofstream out(path, std::ios::binary);
  out << text;
  return path;
}

}  // namespace

TEST_CASE("toml subset parsing") {
  nlohmann::ordered_json j = toml_to_json(kTomlConfig);
  CHECK(j["seed"] == 7);
  CHECK(j["task"]["kind"] == "degree_regression");
  CHECK(j["model"]["norm"]["variant"] == "batchnorm");
  CHECK(j["model"]["norm"]["eps"] == 1e-5);
  CHECK(j["train"]["lr"] == 0.001);

  nlohmann::ordered_json arr = toml_to_json("sizes = [1000, 2000, 4000]\nflag = true\n");
  CHECK(arr["sizes"].size() == 3);
  CHECK(arr["sizes"][2] == 4000);
  CHECK(arr["flag"] == true);

  nlohmann::ordered_json dotted = toml_to_json("a.b.c = \"x\"\n");
  CHECK(dotted["a"]["b"]["c"] == "x");

  CHECK_THROWS_WITH_AS(toml_to_json("bad line\n"), doctest::Contains("line 1"), ConfigError);
  CHECK_THROWS_WITH_AS(toml_to_json("x = \n"), doctest::Contains("missing value"), ConfigError);
  CHECK_THROWS_WITH_AS(toml_to_json("[[t]]\n"), doctest::Contains("not supported"), ConfigError);
  CHECK_THROWS_WITH_AS(toml_to_json("a = 1\na = 2\n"), doctest::Contains("duplicate"), ConfigError);
}

TEST_CASE("experiment config load: toml and json agree") {
  std::string toml_path = write_temp("cfg.toml", kTomlConfig);
  ExperimentConfig a = ExperimentConfig::load(toml_path);
  CHECK(a.seed == 7);
  CHECK(a.channels == 1);
  CHECK(a.norm_name == "batchnorm");
  CHECK(a.train.epochs == 3);
  CHECK_FALSE(a.gnn_gin);

  nlohmann::ordered_json j = toml_to_json(kTomlConfig);
  std::string json_path = write_temp("cfg.json", j.dump(2));
  ExperimentConfig b = ExperimentConfig::load(json_path);
  CHECK(b.seed == a.seed);
  CHECK(b.norm_name == a.norm_name);
  CHECK(b.train.lr == a.train.lr);
  std::remove(toml_path.c_str());
  std::remove(json_path.c_str());
}

TEST_CASE("config rejects unknown fields with names") {
  nlohmann::ordered_json j = toml_to_json(kTomlConfig);
  j["model"]["norm"]["variant"] = "supernorm";
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j), doctest::Contains("supernorm"), ConfigError);

  j = toml_to_json(kTomlConfig);
  j["model"]["gnn"] = "transformer";
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j), doctest::Contains("model.gnn"), ConfigError);

  j = toml_to_json(kTomlConfig);
  j["train"]["optimizer"] = "lion";
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j), doctest::Contains("lion"), ConfigError);

  j = toml_to_json(kTomlConfig);
  j["model"]["norm"]["eps"] = 0.0;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
}

TEST_CASE("config builds a runnable stack") {
  nlohmann::ordered_json j = toml_to_json(kTomlConfig);
  j["task"]["kind"] = "synthetic_graph_regression";
  j["task"]["count"] = 6;
  j["model"]["norm"]["variant"] = "granola";
  j["model"]["norm"]["granola_variant"] = "full";
  j["model"]["channels"] = 3;
  j["model"]["layers"] = 2;
  j["model"]["pooling"] = "sum";
  j["model"]["readout"] = true;
  j["model"]["norm"]["share_across_layers"] = true;
  ExperimentConfig cfg = ExperimentConfig::from_json(j);
  ModelStack stack = cfg.make_stack();
  REQUIRE(stack.layers.size() == 2);
  CHECK(stack.layers[0].norm.is_granola());
  // shared weights: both layers alias one granola instance
  CHECK(stack.layers[0].norm.granola.get() == stack.layers[1].norm.granola.get());

  Task task = cfg.make_task();
  CHECK(task.graphs.size() == 6);

  // node-level tasks narrow the final layer to one channel and skip sharing
  nlohmann::ordered_json d = toml_to_json(kTomlConfig);
  d["model"]["norm"]["variant"] = "granola";
  d["model"]["channels"] = 3;
  d["model"]["layers"] = 2;
  d["model"]["norm"]["share_across_layers"] = true;
  ModelStack degree_stack = ExperimentConfig::from_json(d).make_stack();
  CHECK(gnn_out_width(degree_stack.layers[1].gnn) == 1);
  CHECK(degree_stack.layers[0].norm.granola.get() != degree_stack.layers[1].norm.granola.get());
}

TEST_CASE("results json has fixed field order and stable formatting") {
  RunResults results;
  results.config = nlohmann::ordered_json{{"note", "x"}};
  results.history = {{0, 1.5}, {1, 0.25}};
  results.final_metric = 0.25;
  results.seed = 1;
  results.wall_time_ms = 12.5;
  std::string text = results_to_json(results);
  CHECK(text.find("\"config\"") < text.find("\"history\""));
  CHECK(text.find("\"history\"") < text.find("\"final\""));
  CHECK(text.find("\"final\"") < text.find("\"seed\""));
  CHECK(text.find("\"seed\"") < text.find("\"wall_time_ms\""));

  std::string path = write_temp("hist.csv", "");
  write_history_csv(results.history, path);
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(content == "epoch,loss\n0,1.5\n1,0.25\n");
  std::remove(path.c_str());
}
