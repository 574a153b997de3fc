#include "normlab/graph.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "normlab/rng.hpp"

namespace normlab {

namespace {

std::pair<int64_t, int64_t> normalize_edge(int64_t u, int64_t v) {
  return u <= v ? std::make_pair(u, v) : std::make_pair(v, u);
}

}  // namespace

Graph::Graph(int64_t n, std::vector<std::pair<int64_t, int64_t>> edge_list, bool self_loops)
    : num_nodes(n), allow_self_loops(self_loops) {
  if (n < 1) throw ArgumentError("graph must have at least one node");
  std::set<std::pair<int64_t, int64_t>> seen;
  edges.reserve(edge_list.size());
  for (auto [u, v] : edge_list) {
    if (u < 0 || u >= n || v < 0 || v >= n) {
      throw ArgumentError("edge (" + std::to_string(u) + ", " + std::to_string(v) +
                          ") out of range for " + std::to_string(n) + " nodes");
    }
    if (u == v && !allow_self_loops) {
      throw ArgumentError("self-loop at node " + std::to_string(u) + " not allowed");
    }
    auto e = normalize_edge(u, v);
    if (!seen.insert(e).second) {
      throw ArgumentError("duplicate edge (" + std::to_string(e.first) + ", " +
                          std::to_string(e.second) + ")");
    }
    edges.push_back(e);
  }
  node_features = Tensor::ones({n, 1});
}

std::vector<int64_t> Graph::degrees() const {
  std::vector<int64_t> deg(static_cast<size_t>(num_nodes), 0);
  for (auto [u, v] : edges) {
    ++deg[static_cast<size_t>(u)];
    if (u != v) ++deg[static_cast<size_t>(v)];
  }
  return deg;
}

Tensor Graph::adjacency_dense() const {
  Tensor a({num_nodes, num_nodes});
  for (auto [u, v] : edges) {
    a.at(u, v) = 1.0;
    a.at(v, u) = 1.0;
  }
  return a;
}

void Graph::set_features(Tensor features) {
  if (features.rank() != 2 || features.dim(0) != num_nodes) {
    throw DimensionError("features shape " + shape_str(features.shape()) + " does not match " +
                         std::to_string(num_nodes) + " nodes");
  }
  node_features = std::move(features);
}

Graph Graph::permuted(const std::vector<int64_t>& perm) const {
  if (static_cast<int64_t>(perm.size()) != num_nodes) {
    throw ArgumentError("permutation length does not match node count");
  }
  std::vector<std::pair<int64_t, int64_t>> new_edges;
  new_edges.reserve(edges.size());
  for (auto [u, v] : edges) new_edges.push_back(normalize_edge(perm[static_cast<size_t>(u)], perm[static_cast<size_t>(v)]));
  std::sort(new_edges.begin(), new_edges.end());
  Graph g(num_nodes, new_edges, allow_self_loops);
  Tensor f({num_nodes, feature_width()});
  for (int64_t i = 0; i < num_nodes; ++i) {
    for (int64_t c = 0; c < feature_width(); ++c) f.at(perm[static_cast<size_t>(i)], c) = node_features.at(i, c);
  }
  g.node_features = std::move(f);
  if (node_labels) {
    Tensor lab({num_nodes});
    for (int64_t i = 0; i < num_nodes; ++i) lab.at(perm[static_cast<size_t>(i)]) = node_labels->at(i);
    g.node_labels = std::move(lab);
  }
  return g;
}

Graph generate_cycle(int64_t n) {
  if (n < 3) throw ArgumentError("cycle requires n >= 3, got " + std::to_string(n));
  std::vector<std::pair<int64_t, int64_t>> edges;
  for (int64_t i = 0; i < n; ++i) edges.emplace_back(i, (i + 1) % n);
  return Graph(n, std::move(edges));
}

Graph generate_path(int64_t n) {
  if (n < 2) throw ArgumentError("path requires n >= 2, got " + std::to_string(n));
  std::vector<std::pair<int64_t, int64_t>> edges;
  for (int64_t i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
  return Graph(n, std::move(edges));
}

Graph generate_star(int64_t n) {
  if (n < 2) throw ArgumentError("star requires n >= 2, got " + std::to_string(n));
  std::vector<std::pair<int64_t, int64_t>> edges;
  for (int64_t i = 1; i < n; ++i) edges.emplace_back(0, i);
  return Graph(n, std::move(edges));
}

Graph generate_csl(int64_t n, int64_t skip) {
  if (n < 5) throw ArgumentError("csl requires n >= 5, got " + std::to_string(n));
  if (skip < 2 || skip + 2 > n - skip) {
    throw ArgumentError("csl skip " + std::to_string(skip) + " invalid for n = " + std::to_string(n) +
                        ": need 2 <= skip and skip + 2 <= n - skip");
  }
  std::vector<std::pair<int64_t, int64_t>> edges;
  for (int64_t i = 0; i < n; ++i) edges.emplace_back(i, (i + 1) % n);
  for (int64_t i = 0; i < n; ++i) {
    auto e = normalize_edge(i, (i + skip) % n);
    // each skip edge appears from both endpoints; keep the first sighting
    if (std::find(edges.begin(), edges.end(), e) == edges.end()) edges.push_back(e);
  }
  return Graph(n, std::move(edges));
}

Graph generate_er(int64_t n, double p, uint64_t seed) {
  if (n < 1) throw ArgumentError("er requires n >= 1");
  if (p < 0.0 || p > 1.0) throw ArgumentError("er probability must be in [0, 1], got " + std::to_string(p));
  Rng rng = Rng(seed).fork(0x6572ULL);
  std::vector<std::pair<int64_t, int64_t>> edges;
  for (int64_t u = 0; u < n; ++u) {
    for (int64_t v = u + 1; v < n; ++v) {
      if (rng.uniform() < p) edges.emplace_back(u, v);
    }
  }
  return Graph(n, std::move(edges));
}

Graph disjoint_union(const Graph& a, const Graph& b) {
  if (a.feature_width() != b.feature_width()) {
    throw ArgumentError("disjoint_union: feature widths disagree");
  }
  std::vector<std::pair<int64_t, int64_t>> edges = a.edges;
  for (auto [u, v] : b.edges) edges.emplace_back(u + a.num_nodes, v + a.num_nodes);
  Graph g(a.num_nodes + b.num_nodes, std::move(edges));
  Tensor f({g.num_nodes, a.feature_width()});
  for (int64_t i = 0; i < a.num_nodes; ++i) {
    for (int64_t c = 0; c < a.feature_width(); ++c) f.at(i, c) = a.node_features.at(i, c);
  }
  for (int64_t i = 0; i < b.num_nodes; ++i) {
    for (int64_t c = 0; c < b.feature_width(); ++c) f.at(a.num_nodes + i, c) = b.node_features.at(i, c);
  }
  g.node_features = std::move(f);
  return g;
}

Tensor GraphBatch::adjacency_dense() const {
  Tensor a({batch_size, n_max, n_max});
  for (int64_t b = 0; b < batch_size; ++b) {
    for (auto [u, v] : edges[static_cast<size_t>(b)]) {
      a.at(b, u, v) = 1.0;
      a.at(b, v, u) = 1.0;
    }
  }
  return a;
}

Tensor GraphBatch::mask_channels(int64_t channels) const {
  Tensor m({batch_size, n_max, channels});
  for (int64_t b = 0; b < batch_size; ++b) {
    for (int64_t i = 0; i < n_max; ++i) {
      if (node_mask.at(b, i) == 0.0) continue;
      for (int64_t c = 0; c < channels; ++c) m.at(b, i, c) = 1.0;
    }
  }
  return m;
}

std::vector<int64_t> GraphBatch::degrees(int64_t graph) const {
  std::vector<int64_t> deg(static_cast<size_t>(n_max), 0);
  for (auto [u, v] : edges[static_cast<size_t>(graph)]) {
    ++deg[static_cast<size_t>(u)];
    if (u != v) ++deg[static_cast<size_t>(v)];
  }
  return deg;
}

GraphBatch batch_graphs(const std::vector<Graph>& graphs) {
  if (graphs.empty()) throw ArgumentError("batch_graphs: empty graph list");
  const int64_t width = graphs.front().feature_width();
  GraphBatch batch;
  batch.batch_size = static_cast<int64_t>(graphs.size());
  for (const Graph& g : graphs) {
    if (g.feature_width() != width) {
      throw ArgumentError("batch_graphs: inconsistent feature width " +
                          std::to_string(g.feature_width()) + " vs " + std::to_string(width));
    }
    batch.n_max = std::max(batch.n_max, g.num_nodes);
  }
  batch.features = Tensor({batch.batch_size, batch.n_max, width});
  batch.node_mask = Tensor({batch.batch_size, batch.n_max});
  for (const Graph& g : graphs) batch.padded = batch.padded || g.num_nodes < batch.n_max;
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    const Graph& g = graphs[static_cast<size_t>(b)];
    batch.num_nodes.push_back(g.num_nodes);
    batch.edges.push_back(g.edges);
    for (int64_t i = 0; i < g.num_nodes; ++i) {
      batch.node_mask.at(b, i) = 1.0;
      for (int64_t c = 0; c < width; ++c) batch.features.at(b, i, c) = g.node_features.at(i, c);
    }
  }
  return batch;
}

std::vector<int64_t> wl_refinement(const Graph& g, int64_t iterations) {
  if (iterations < 0) throw ArgumentError("wl_refinement: iterations must be >= 0");
  const int64_t rounds = iterations == 0 ? g.num_nodes : iterations;
  std::vector<std::vector<int64_t>> adj(static_cast<size_t>(g.num_nodes));
  for (auto [u, v] : g.edges) {
    adj[static_cast<size_t>(u)].push_back(v);
    if (u != v) adj[static_cast<size_t>(v)].push_back(u);
  }
  std::vector<int64_t> color(static_cast<size_t>(g.num_nodes), 0);
  int64_t num_colors = 1;
  for (int64_t round = 0; round < rounds; ++round) {
    // signature = (own color, sorted multiset of neighbor colors); new dense
    // ids assigned by lexicographic signature order for permutation invariance
    std::vector<std::pair<std::vector<int64_t>, int64_t>> sigs(static_cast<size_t>(g.num_nodes));
    for (int64_t i = 0; i < g.num_nodes; ++i) {
      std::vector<int64_t> sig;
      sig.push_back(color[static_cast<size_t>(i)]);
      std::vector<int64_t> ns;
      for (int64_t nb : adj[static_cast<size_t>(i)]) ns.push_back(color[static_cast<size_t>(nb)]);
      std::sort(ns.begin(), ns.end());
      sig.insert(sig.end(), ns.begin(), ns.end());
      sigs[static_cast<size_t>(i)] = {std::move(sig), i};
    }
    std::map<std::vector<int64_t>, int64_t> rank;
    for (const auto& [sig, node] : sigs) rank.emplace(sig, 0);
    int64_t next_id = 0;
    for (auto& [sig, id] : rank) id = next_id++;
    std::vector<int64_t> new_color(static_cast<size_t>(g.num_nodes));
    for (const auto& [sig, node] : sigs) new_color[static_cast<size_t>(node)] = rank[sig];
    const bool stable = next_id == num_colors && new_color == color;
    color = std::move(new_color);
    num_colors = next_id;
    if (stable) break;
  }
  std::sort(color.begin(), color.end());
  return color;
}

std::string graph_to_json(const Graph& g) {
  nlohmann::ordered_json j;
  j["num_nodes"] = g.num_nodes;
  j["edges"] = nlohmann::ordered_json::array();
  for (auto [u, v] : g.edges) j["edges"].push_back({u, v});
  j["features"] = nlohmann::ordered_json::array();
  for (int64_t i = 0; i < g.num_nodes; ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (int64_t c = 0; c < g.feature_width(); ++c) row.push_back(g.node_features.at(i, c));
    j["features"].push_back(row);
  }
  if (g.node_labels) {
    j["labels"] = nlohmann::ordered_json::array();
    for (int64_t i = 0; i < g.num_nodes; ++i) j["labels"].push_back(g.node_labels->at(i));
  }
  return j.dump(2) + "\n";
}

Graph graph_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("graph json: ") + e.what());
  }
  if (!j.contains("num_nodes") || !j["num_nodes"].is_number_integer()) {
    throw ConfigError("graph json: field 'num_nodes' missing or not an integer");
  }
  const int64_t n = j["num_nodes"].get<int64_t>();
  if (!j.contains("edges") || !j["edges"].is_array()) {
    throw ConfigError("graph json: field 'edges' missing or not an array");
  }
  std::vector<std::pair<int64_t, int64_t>> edges;
  size_t idx = 0;
  for (const auto& e : j["edges"]) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
      throw ConfigError("graph json: edges[" + std::to_string(idx) + "] must be a pair of integers");
    }
    edges.emplace_back(e[0].get<int64_t>(), e[1].get<int64_t>());
    ++idx;
  }
  Graph g;
  try {
    g = Graph(n, std::move(edges));
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("graph json: ") + e.what());
  }
  if (j.contains("features")) {
    if (!j["features"].is_array() || static_cast<int64_t>(j["features"].size()) != n) {
      throw ConfigError("graph json: field 'features' must have one row per node");
    }
    const int64_t width = j["features"].empty() ? 0 : static_cast<int64_t>(j["features"][0].size());
    if (width < 1) throw ConfigError("graph json: feature rows must be non-empty");
    Tensor f({n, width});
    for (int64_t i = 0; i < n; ++i) {
      const auto& row = j["features"][static_cast<size_t>(i)];
      if (!row.is_array() || static_cast<int64_t>(row.size()) != width) {
        throw ConfigError("graph json: features[" + std::to_string(i) + "] has inconsistent width");
      }
      for (int64_t c = 0; c < width; ++c) {
        if (!row[static_cast<size_t>(c)].is_number()) {
          throw ConfigError("graph json: features[" + std::to_string(i) + "][" + std::to_string(c) +
                            "] is not a number");
        }
        f.at(i, c) = row[static_cast<size_t>(c)].get<double>();
      }
    }
    g.node_features = std::move(f);
  }
  if (j.contains("labels")) {
    if (!j["labels"].is_array() || static_cast<int64_t>(j["labels"].size()) != n) {
      throw ConfigError("graph json: field 'labels' must have one entry per node");
    }
    Tensor lab({n});
    for (int64_t i = 0; i < n; ++i) {
      if (!j["labels"][static_cast<size_t>(i)].is_number()) {
        throw ConfigError("graph json: labels[" + std::to_string(i) + "] is not a number");
      }
      lab.at(i) = j["labels"][static_cast<size_t>(i)].get<double>();
    }
    g.node_labels = std::move(lab);
  }
  return g;
}

Graph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open graph file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return graph_from_json(buf.str());
}

void save_graph(const Graph& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write graph file: " + path);
  out << graph_to_json(g);
}

}  // namespace normlab
