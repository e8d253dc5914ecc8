#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>
#include <nlohmann/json.hpp>

namespace sisinvest {

using NodeId = std::size_t;

/// Directed infection edge: an infected `src` attacks `dst` at `rate` per unit time.
struct Edge {
  NodeId src = 0;
  NodeId dst = 0;
  double rate = 0.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Per-node model parameters.
struct NodeParams {
  double lambda = 0.0;     ///< external attack rate
  double delta = 0.1;      ///< recovery rate, strictly positive
  double cost = 0.0;       ///< infection cost rate c_i
  double kappa = 10.0;     ///< breach sensitivity
  double breach_exp = 1.0; ///< exponent b in q(s) = (1 + kappa s)^-b

  friend bool operator==(const NodeParams&, const NodeParams&) = default;
};

/// Immutable weighted dependence graph.
///
/// Edges store beta_{src,dst}. The infection matrix B returned by
/// infection_matrix() is oriented the other way: B(i, j) = beta_{j,i}, so
/// (B p)_i is the secondary attack pressure on node i.
class DependenceGraph {
 public:
  DependenceGraph() = default;

  /// Validates parameters and edges. Duplicate (src, dst) pairs are an error;
  /// self-loops are rejected. Weak connectivity is not checked here, see
  /// require_weakly_connected().
  DependenceGraph(std::vector<NodeParams> nodes, std::vector<Edge> edges);

  std::size_t size() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  const std::vector<NodeParams>& nodes() const { return nodes_; }
  const NodeParams& node(NodeId i) const { return nodes_[i]; }
  const std::vector<Edge>& edges() const { return edges_; }

  /// Indices into edges() of the edges leaving / entering a node.
  const std::vector<std::size_t>& out_edges(NodeId i) const { return out_[i]; }
  const std::vector<std::size_t>& in_edges(NodeId i) const { return in_[i]; }

  const Eigen::SparseMatrix<double>& infection_matrix() const { return b_; }

  Eigen::VectorXd lambda() const;
  Eigen::VectorXd delta() const;
  Eigen::VectorXd cost() const;

  /// Copy with replaced node parameters (same topology).
  DependenceGraph with_nodes(std::vector<NodeParams> nodes) const;
  /// Copy with additional edges.
  DependenceGraph with_added_edges(const std::vector<Edge>& extra) const;

 private:
  std::vector<NodeParams> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<std::vector<std::size_t>> in_;
  Eigen::SparseMatrix<double> b_;
};

// ---------------------------------------------------------------------------
// Ingestion

/// Result of parsing a whitespace-separated edge list.
struct EdgeListSkeleton {
  std::size_t node_count = 0;
  std::vector<std::pair<NodeId, NodeId>> edges;  ///< compacted ids, deduplicated
  std::vector<std::int64_t> original_ids;        ///< compact id -> id in file
  std::size_t self_loops_dropped = 0;
  std::size_t duplicates_dropped = 0;
};

EdgeListSkeleton parse_edge_list(std::string_view text);

/// Network JSON: {"nodes":[{"id","lambda","delta","c","kappa","beta_exp"}],
/// "edges":[{"src","dst","rate"}]}. Node ids are compacted in array order.
DependenceGraph graph_from_json(const nlohmann::json& j);
nlohmann::json graph_to_json(const DependenceGraph& g);

// ---------------------------------------------------------------------------
// Structure

/// Connected components of the undirected shadow, each sorted ascending.
std::vector<std::vector<NodeId>> weak_components(const DependenceGraph& g);

/// Throws InputError listing the components when the graph is not weakly connected.
void require_weakly_connected(const DependenceGraph& g);

struct Condensation {
  std::vector<std::vector<NodeId>> msccs;            ///< node sets, ids in topological order
  std::vector<std::size_t> component_of;             ///< node -> mscc index
  std::vector<std::pair<std::size_t, std::size_t>> dag;  ///< deduplicated mscc edges
  std::vector<std::size_t> level;                    ///< longest path from a leaf (in-degree 0) vertex
  std::vector<bool> exposed;
  std::vector<std::size_t> order;                    ///< topological order sorted by level

  std::size_t size() const { return msccs.size(); }
  std::size_t max_level() const;
  bool node_exposed(NodeId i) const { return exposed[component_of[i]]; }
};

/// Tarjan condensation with longest-path levels and exposure labels.
Condensation condense(const DependenceGraph& g);

// ---------------------------------------------------------------------------
// Generation

/// Undirected edge list (i < j) of a simple connected graph whose degree
/// sequence follows a truncated power law P(k) ~ k^-power on [min_deg, max_deg].
struct ScaleFreeTopology {
  std::size_t size = 0;
  std::vector<std::size_t> degrees;  ///< drawn (parity-corrected) sequence
  std::vector<std::pair<NodeId, NodeId>> links;
  std::size_t attempts = 0;
};

ScaleFreeTopology generate_scale_free_topology(std::size_t size, double power, std::size_t min_deg,
                                               std::size_t max_deg, std::uint64_t seed);

/// Bidirectional scale-free MSCC: every undirected link becomes two directed
/// edges with rates drawn uniformly from [rate_lo, rate_hi].
std::vector<Edge> generate_scale_free(std::size_t size, double power, std::size_t min_deg,
                                      std::size_t max_deg, std::uint64_t seed, double rate_lo = 0.01,
                                      double rate_hi = 1.0);

/// ceil(3 ln n), the default maximum degree used by the experiment generators.
std::size_t default_max_degree(std::size_t size);

/// Adds `count` distinct directed edges from nodes in `from` to nodes in `to`,
/// sampled uniformly without replacement among pairs not already connected.
DependenceGraph add_cross_edges(const DependenceGraph& g, const std::vector<NodeId>& from,
                                const std::vector<NodeId>& to, std::size_t count,
                                std::pair<double, double> rate_range, std::uint64_t seed);

}  // namespace sisinvest
