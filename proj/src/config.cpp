#include "normlab/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace normlab {

namespace {

using Json = nlohmann::ordered_json;

struct TomlParser {
  std::istringstream in;
  int line_no = 0;

  explicit TomlParser(const std::string& text) : in(text) {}

  [[noreturn]] void fail(const std::string& message) const {
    throw ConfigError("toml line " + std::to_string(line_no) + ": " + message);
  }

  static std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  // removes a trailing comment that is not inside a string
  static std::string drop_comment(const std::string& s) {
    bool in_str = false;
    for (size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') in_str = !in_str;
      if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
  }

  std::vector<std::string> split_key(const std::string& key) const {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : key) {
      if (c == '.') {
        if (cur.empty()) fail("empty key segment in '" + key + "'");
        parts.push_back(cur);
        cur.clear();
      } else if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') {
        cur += c;
      } else if (c == ' ' || c == '\t') {
        continue;
      } else {
        fail(std::string("unsupported character '") + c + "' in key '" + key + "'");
      }
    }
    if (cur.empty()) fail("empty key segment in '" + key + "'");
    parts.push_back(cur);
    return parts;
  }

  Json parse_scalar(const std::string& raw) const {
    const std::string v = strip(raw);
    if (v.empty()) fail("missing value");
    if (v.front() == '"') {
      if (v.size() < 2 || v.back() != '"') fail("unterminated string");
      std::string out;
      for (size_t i = 1; i + 1 < v.size(); ++i) {
        if (v[i] == '\\' && i + 2 < v.size()) {
          ++i;
          switch (v[i]) {
            case 'n': out += '\n'; break;
            case 't': out += '\t'; break;
            case '"': out += '"'; break;
            case '\\': out += '\\'; break;
            default: fail(std::string("unsupported escape \\") + v[i]);
          }
        } else {
          out += v[i];
        }
      }
      return Json(out);
    }
    if (v == "true") return Json(true);
    if (v == "false") return Json(false);
    if (v.front() == '[') {
      if (v.back() != ']') fail("unterminated array");
      Json arr = Json::array();
      std::string body = v.substr(1, v.size() - 2);
      std::string item;
      for (char c : body) {
        if (c == ',') {
          if (!strip(item).empty()) arr.push_back(parse_scalar(item));
          item.clear();
        } else {
          item += c;
        }
      }
      if (!strip(item).empty()) arr.push_back(parse_scalar(item));
      return arr;
    }
    // numbers: integer when it round-trips, float otherwise
    try {
      size_t used = 0;
      if (v.find_first_of(".eE") == std::string::npos) {
        const long long n = std::stoll(v, &used);
        if (used == v.size()) return Json(n);
      }
      const double d = std::stod(v, &used);
      if (used == v.size()) return Json(d);
    } catch (const std::exception&) {
    }
    fail("cannot parse value '" + v + "'");
  }

  Json parse() {
    Json root = Json::object();
    std::vector<std::string> prefix;
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      line = strip(drop_comment(line));
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.size() > 1 && line[1] == '[') fail("arrays of tables are not supported");
        if (line.back() != ']') fail("unterminated table header");
        prefix = split_key(line.substr(1, line.size() - 2));
        Json* node = &root;
        for (const std::string& part : prefix) {
          if (!node->contains(part)) (*node)[part] = Json::object();
          node = &(*node)[part];
          if (!node->is_object()) fail("table '" + part + "' collides with a value");
        }
        continue;
      }
      const size_t eq = line.find('=');
      if (eq == std::string::npos) fail("expected 'key = value'");
      std::vector<std::string> key = split_key(strip(line.substr(0, eq)));
      Json value = parse_scalar(line.substr(eq + 1));
      Json* node = &root;
      for (const std::string& part : prefix) node = &(*node)[part];
      for (size_t i = 0; i + 1 < key.size(); ++i) {
        if (!node->contains(key[i])) (*node)[key[i]] = Json::object();
        node = &(*node)[key[i]];
        if (!node->is_object()) fail("key '" + key[i] + "' collides with a value");
      }
      if (node->contains(key.back())) fail("duplicate key '" + key.back() + "'");
      (*node)[key.back()] = std::move(value);
    }
    return root;
  }
};

const Json* find(const Json& j, const std::string& key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

template <typename T>
T get_or(const Json& j, const std::string& field, T fallback) {
  const Json* v = find(j, field);
  if (v == nullptr) return fallback;
  try {
    return v->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config field '" + field + "' has the wrong type");
  }
}

std::string get_string(const Json& j, const std::string& field, const std::string& fallback) {
  return get_or<std::string>(j, field, fallback);
}

TaskKind task_from_name(const std::string& name) {
  if (name == "degree_regression") return TaskKind::DegreeRegression;
  if (name == "pair_distinguish") return TaskKind::PairDistinguish;
  if (name == "synthetic_graph_regression") return TaskKind::SyntheticGraphRegression;
  throw ConfigError("config field 'task.kind' unknown: " + name);
}

}  // namespace

Json toml_to_json(const std::string& text) {
  TomlParser parser(text);
  return parser.parse();
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  Json j;
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
    try {
      j = Json::parse(buf.str());
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(std::string("config json: ") + e.what());
    }
  } else {
    j = toml_to_json(buf.str());
  }
  return from_json(j);
}

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  ExperimentConfig cfg;
  cfg.echo = j;
  cfg.seed = get_or<uint64_t>(j, "seed", 0);

  const Json task = j.contains("task") ? j.at("task") : Json::object();
  cfg.task_kind = task_from_name(get_string(task, "kind", "degree_regression"));
  cfg.task_count = get_or<int64_t>(task, "count", 200);

  const Json model = j.contains("model") ? j.at("model") : Json::object();
  cfg.channels = get_or<int64_t>(model, "channels", 8);
  cfg.layers = get_or<int64_t>(model, "layers", 2);
  if (cfg.channels < 1) throw ConfigError("config field 'model.channels' must be >= 1");
  if (cfg.layers < 0) throw ConfigError("config field 'model.layers' must be >= 0");
  const std::string gnn = get_string(model, "gnn", "gin");
  if (gnn == "gin") {
    cfg.gnn_gin = true;
  } else if (gnn == "graphconv") {
    cfg.gnn_gin = false;
  } else {
    throw ConfigError("config field 'model.gnn' unknown: " + gnn);
  }
  const std::string act = get_string(model, "activation", "relu");
  if (act == "relu") {
    cfg.activation = ActivationKind::Relu;
  } else if (act == "identity") {
    cfg.activation = ActivationKind::Identity;
  } else {
    throw ConfigError("config field 'model.activation' unknown: " + act);
  }
  const std::string pool = get_string(model, "pooling", "none");
  if (pool == "none") {
    cfg.pooling = PoolingKind::None;
  } else if (pool == "sum") {
    cfg.pooling = PoolingKind::Sum;
  } else if (pool == "mean") {
    cfg.pooling = PoolingKind::Mean;
  } else {
    throw ConfigError("config field 'model.pooling' unknown: " + pool);
  }
  cfg.readout = get_or<bool>(model, "readout", false);

  const Json norm = model.contains("norm") ? model.at("norm") : Json::object();
  cfg.norm_name = get_string(norm, "variant", "identity");
  if (cfg.norm_name != "granola") {
    try {
      cfg.norm_spec.variant = norm_variant_from_name(cfg.norm_name);
    } catch (const ArgumentError& e) {
      throw ConfigError(std::string("config field 'model.norm.variant': ") + e.what());
    }
  }
  cfg.norm_spec.eps = get_or<double>(norm, "eps", 1e-5);
  cfg.norm_spec.affine = get_or<bool>(norm, "affine", false);
  cfg.norm_spec.s = get_or<double>(norm, "s", 1.0);
  cfg.norm_spec.p = get_or<double>(norm, "p", 2.0);
  cfg.norm_spec.lambda = get_or<double>(norm, "lambda", 0.01);
  cfg.norm_spec.clusters = get_or<int64_t>(norm, "clusters", 4);
  cfg.norm_spec.size_norm_batchnorm = get_or<bool>(norm, "size_norm_batchnorm", true);
  if (cfg.norm_name == "granola") {
    try {
      cfg.granola_variant = granola_variant_from_name(get_string(norm, "granola_variant", "full"));
    } catch (const ArgumentError& e) {
      throw ConfigError(std::string("config field 'model.norm.granola_variant': ") + e.what());
    }
    const std::string stats = get_string(norm, "stats", "layernorm_node");
    if (stats == "layernorm_node") {
      cfg.granola_stats = GranolaStats::LayerNormNode;
    } else if (stats == "batchnorm") {
      cfg.granola_stats = GranolaStats::BatchNorm;
    } else {
      throw ConfigError("config field 'model.norm.stats' unknown: " + stats);
    }
    cfg.granola_depth = get_or<int64_t>(norm, "norm_depth", 2);
    cfg.granola_k = get_or<int64_t>(norm, "k", 0);
    cfg.granola_embed = get_or<int64_t>(norm, "norm_embed", 0);
    const std::string ngnn = get_string(norm, "norm_gnn", "gin");
    if (ngnn == "gin") {
      cfg.granola_norm_gnn_gin = true;
    } else if (ngnn == "graphconv") {
      cfg.granola_norm_gnn_gin = false;
    } else {
      throw ConfigError("config field 'model.norm.norm_gnn' unknown: " + ngnn);
    }
    cfg.granola_share = get_or<bool>(norm, "share_across_layers", false);
    cfg.granola_gamma_zero = get_or<bool>(norm, "gamma_zero", false);
    cfg.granola_ms_swap = get_or<bool>(norm, "ms_swap_roles", false);
    cfg.granola_resample = get_or<bool>(norm, "resample", true);
  }

  const Json train = j.contains("train") ? j.at("train") : Json::object();
  cfg.train.epochs = get_or<int64_t>(train, "epochs", 100);
  cfg.train.batch_size = get_or<int64_t>(train, "batch_size", 0);
  cfg.train.lr = get_or<double>(train, "lr", 1e-3);
  try {
    cfg.train.optimizer = optimizer_from_name(get_string(train, "optimizer", "adam"));
    cfg.train.loss = loss_from_name(get_string(train, "loss", "mae"));
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("config field 'train': ") + e.what());
  }
  cfg.train.seed = cfg.seed;
  try {
    cfg.train.validate();
    if (cfg.norm_name != "granola") cfg.norm_spec.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

Task ExperimentConfig::make_task() const {
  switch (task_kind) {
    case TaskKind::DegreeRegression: return Task::degree_task();
    case TaskKind::PairDistinguish: return Task::pair_distinguish_task();
    case TaskKind::SyntheticGraphRegression: return Task::synthetic_regression(task_count, seed);
  }
  throw ConfigError("unknown task kind");
}

ModelStack ExperimentConfig::make_stack() const {
  Rng rng = Rng(seed).fork(0x696e6974ULL);
  ModelStack stack;
  std::shared_ptr<GranolaLayer> shared;
  const bool node_level = task_kind == TaskKind::DegreeRegression;
  int64_t in = 1;  // all tasks start from 1-wide features
  for (int64_t i = 0; i < layers; ++i) {
    // node-level regression needs a 1-wide final layer
    const int64_t out = node_level && i + 1 == layers ? 1 : channels;
    StackLayer layer;
    if (gnn_gin) {
      layer.gnn = GINLayer::create(in, out, rng);
    } else {
      layer.gnn = GraphConvLayer::create(in, out, rng);
    }
    if (norm_name == "granola") {
      // weight sharing needs matching widths
      if (granola_share && shared != nullptr && shared->channels() == out) {
        layer.norm.granola = shared;
      } else {
        auto g = std::make_shared<GranolaLayer>(
            GranolaLayer::create(out, granola_variant, granola_depth, granola_stats,
                                 granola_norm_gnn_gin, rng, granola_k, granola_embed));
        g->eps = norm_spec.eps;
        g->gamma_zero = granola_gamma_zero;
        g->ms_swap_roles = granola_ms_swap;
        g->rnf.resample_each_forward = granola_resample;
        layer.norm.granola = g;
        if (granola_share) shared = g;
      }
    } else {
      layer.norm.spec = norm_spec;
      layer.norm.affine = AffineParams::create(norm_spec, out, rng);
    }
    layer.activation = activation;
    stack.layers.push_back(std::move(layer));
    in = out;
  }
  stack.pooling = pooling;
  if (readout) {
    if (pooling == PoolingKind::None) throw ConfigError("config: readout requires pooling");
    stack.readout = Mlp::create(channels, channels, 1, rng);
  }
  return stack;
}

std::string results_to_json(const RunResults& results) {
  Json j;
  j["config"] = results.config;
  j["history"] = Json::array();
  for (const auto& [epoch, loss] : results.history) j["history"].push_back({epoch, loss});
  j["final"] = Json::object();
  j["final"][results.metric_name] = results.final_metric;
  j["seed"] = results.seed;
  j["wall_time_ms"] = results.wall_time_ms;
  return j.dump(2) + "\n";
}

void write_results(const RunResults& results, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write results file: " + path);
  out << results_to_json(results);
}

void write_history_csv(const std::vector<std::pair<int64_t, double>>& history,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write history file: " + path);
  out << "epoch,loss\n";
  for (const auto& [epoch, loss] : history) {
    Json v = loss;  // shortest round-trip double formatting
    out << epoch << "," << v.dump() << "\n";
  }
}

void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write benchmark file: " + path);
  out << "variant,nodes,median_ms,ratio_vs_prev\n";
  for (size_t i = 0; i < rows.size(); ++i) {
    out << rows[i].variant << "," << rows[i].nodes << "," << Json(rows[i].median_ms).dump();
    if (i > 0 && rows[i - 1].variant == rows[i].variant) {
      out << "," << Json(rows[i].median_ms / rows[i - 1].median_ms).dump();
    } else {
      out << ",";
    }
    out << "\n";
  }
}

}  // namespace normlab
