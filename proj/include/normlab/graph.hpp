#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab {

// Undirected simple graph with dense node features. Edges are stored as
// normalized (u < v) pairs; the dense adjacency is materialized on demand.
struct Graph {
  int64_t num_nodes = 0;
  std::vector<std::pair<int64_t, int64_t>> edges;
  Tensor node_features;                 // [N, C0]; defaults to the all-ones column
  std::optional<Tensor> node_labels;    // [N]
  bool allow_self_loops = false;

  Graph() = default;
  Graph(int64_t n, std::vector<std::pair<int64_t, int64_t>> edge_list, bool self_loops = false);

  int64_t feature_width() const { return node_features.dim(1); }
  std::vector<int64_t> degrees() const;
  Tensor adjacency_dense() const;  // [N, N] symmetric 0/1
  void set_features(Tensor features);

  // Relabels nodes: node i becomes perm[i]. Features and labels follow.
  Graph permuted(const std::vector<int64_t>& perm) const;
};

// --- generators (deterministic given parameters and seed) ---
Graph generate_cycle(int64_t n);
Graph generate_path(int64_t n);
Graph generate_star(int64_t n);  // node 0 is the hub
// Circulant skip-link graph: edges {i,i+1}, {i,i+skip} mod n. Requires a
// canonical skip with 2 <= skip and skip + 2 <= n - skip so the two edge
// families stay disjoint simple edges.
Graph generate_csl(int64_t n, int64_t skip);
Graph generate_er(int64_t n, double p, uint64_t seed);
// Disjoint union, node ids of `b` shifted past `a`.
Graph disjoint_union(const Graph& a, const Graph& b);

// Padded batch of B graphs. Masked-off rows of features stay exactly zero
// and no edge touches a padded node.
struct GraphBatch {
  int64_t batch_size = 0;
  int64_t n_max = 0;
  bool padded = false;  // any graph smaller than n_max
  Tensor features;                    // [B, n_max, C]
  Tensor node_mask;                   // [B, n_max] 0/1
  std::vector<int64_t> num_nodes;     // per graph
  std::vector<std::vector<std::pair<int64_t, int64_t>>> edges;  // per graph

  int64_t feature_width() const { return features.dim(2); }
  Tensor adjacency_dense() const;     // [B, n_max, n_max]
  // Mask broadcast to [B, n_max, C] for elementwise re-masking.
  Tensor mask_channels(int64_t channels) const;
  std::vector<int64_t> degrees(int64_t graph) const;
};

GraphBatch batch_graphs(const std::vector<Graph>& graphs);

// 1-WL color refinement. Returns the sorted multiset of final node colors;
// colors are canonical per round (dense ids assigned by sorted signature),
// so the histogram is invariant under node permutation.
std::vector<int64_t> wl_refinement(const Graph& g, int64_t iterations = 0);

// --- JSON I/O ---
// Schema: {"num_nodes": int, "edges": [[u,v],...], "features": [[...],...],
//          "labels": [...] optional}
std::string graph_to_json(const Graph& g);
Graph graph_from_json(const std::string& text);
Graph load_graph(const std::string& path);
void save_graph(const Graph& g, const std::string& path);

}  // namespace normlab
