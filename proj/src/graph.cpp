#include "sisinvest/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "sisinvest/errors.hpp"

namespace sisinvest {

namespace {

std::uint64_t pair_key(NodeId a, NodeId b) {
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
}

void check_node(const NodeParams& p, std::size_t i) {
  auto bad = [&](const char* what) {
    std::ostringstream os;
    os << "node " << i << ": " << what;
    throw InputError(os.str());
  };
  if (!std::isfinite(p.lambda) || p.lambda < 0) bad("lambda must be finite and >= 0");
  if (!std::isfinite(p.delta) || p.delta <= 0) bad("delta must be finite and > 0");
  if (!std::isfinite(p.cost) || p.cost < 0) bad("c must be finite and >= 0");
  if (!std::isfinite(p.kappa) || p.kappa <= 0) bad("kappa must be finite and > 0");
  if (!std::isfinite(p.breach_exp) || p.breach_exp <= 0) bad("beta_exp must be finite and > 0");
}

}  // namespace

DependenceGraph::DependenceGraph(std::vector<NodeParams> nodes, std::vector<Edge> edges)
    : nodes_(std::move(nodes)), edges_(std::move(edges)) {
  const std::size_t n = nodes_.size();
  for (std::size_t i = 0; i < n; ++i) check_node(nodes_[i], i);

  out_.assign(n, {});
  in_.assign(n, {});
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(edges_.size() * 2);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(edges_.size());
  for (std::size_t k = 0; k < edges_.size(); ++k) {
    const Edge& e = edges_[k];
    std::ostringstream os;
    if (e.src >= n || e.dst >= n) {
      os << "edge " << k << " (" << e.src << "->" << e.dst << ") references a missing node";
      throw InputError(os.str());
    }
    if (e.src == e.dst) {
      os << "edge " << k << ": self-loop on node " << e.src;
      throw InputError(os.str());
    }
    if (!std::isfinite(e.rate) || e.rate < 0) {
      os << "edge " << k << ": rate must be finite and >= 0";
      throw InputError(os.str());
    }
    if (!seen.insert(pair_key(e.src, e.dst)).second) {
      os << "duplicate edge " << e.src << "->" << e.dst;
      throw InputError(os.str());
    }
    out_[e.src].push_back(k);
    in_[e.dst].push_back(k);
    trip.emplace_back(static_cast<int>(e.dst), static_cast<int>(e.src), e.rate);
  }
  b_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  b_.setFromTriplets(trip.begin(), trip.end());
}

Eigen::VectorXd DependenceGraph::lambda() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) v[static_cast<Eigen::Index>(i)] = nodes_[i].lambda;
  return v;
}

Eigen::VectorXd DependenceGraph::delta() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) v[static_cast<Eigen::Index>(i)] = nodes_[i].delta;
  return v;
}

Eigen::VectorXd DependenceGraph::cost() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) v[static_cast<Eigen::Index>(i)] = nodes_[i].cost;
  return v;
}

DependenceGraph DependenceGraph::with_nodes(std::vector<NodeParams> nodes) const {
  if (nodes.size() != nodes_.size()) throw InputError("with_nodes: node count mismatch");
  return DependenceGraph(std::move(nodes), edges_);
}

DependenceGraph DependenceGraph::with_added_edges(const std::vector<Edge>& extra) const {
  std::vector<Edge> all = edges_;
  all.insert(all.end(), extra.begin(), extra.end());
  return DependenceGraph(nodes_, std::move(all));
}

// ---------------------------------------------------------------------------

EdgeListSkeleton parse_edge_list(std::string_view text) {
  EdgeListSkeleton out;
  std::unordered_map<std::int64_t, NodeId> compact;
  std::unordered_set<std::uint64_t> seen;
  auto id_of = [&](std::int64_t raw) {
    auto [it, fresh] = compact.emplace(raw, out.original_ids.size());
    if (fresh) out.original_ids.push_back(raw);
    return it->second;
  };

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    ++line_no;

    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) continue;
    line.remove_prefix(first);
    if (line.front() == '#') continue;

    std::int64_t ids[2];
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int k = 0; k < 2; ++k) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      auto [ptr, ec] = std::from_chars(p, end, ids[k]);
      if (ec != std::errc() || ptr == p) {
        throw InputError("edge list line " + std::to_string(line_no) + ": expected two integer node ids");
      }
      p = ptr;
    }
    while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
    if (p != end) {
      throw InputError("edge list line " + std::to_string(line_no) + ": trailing characters");
    }

    const NodeId a = id_of(ids[0]);
    const NodeId b = id_of(ids[1]);
    if (a == b) {
      ++out.self_loops_dropped;
      continue;
    }
    if (!seen.insert(pair_key(a, b)).second) {
      ++out.duplicates_dropped;
      continue;
    }
    out.edges.emplace_back(a, b);
  }
  out.node_count = out.original_ids.size();
  return out;
}

DependenceGraph graph_from_json(const nlohmann::json& j) {
  try {
    const auto& jn = j.at("nodes");
    std::unordered_map<std::int64_t, NodeId> index;
    std::vector<NodeParams> nodes;
    nodes.reserve(jn.size());
    for (const auto& n : jn) {
      const auto id = n.at("id").get<std::int64_t>();
      if (!index.emplace(id, nodes.size()).second) {
        throw InputError("network JSON: duplicate node id " + std::to_string(id));
      }
      NodeParams p;
      p.lambda = n.value("lambda", 0.0);
      p.delta = n.value("delta", 0.1);
      p.cost = n.value("c", 0.0);
      p.kappa = n.value("kappa", 1.0 / p.delta);
      p.breach_exp = n.value("beta_exp", 1.0);
      nodes.push_back(p);
    }
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
      const auto s = e.at("src").get<std::int64_t>();
      const auto d = e.at("dst").get<std::int64_t>();
      auto is = index.find(s);
      auto id = index.find(d);
      if (is == index.end() || id == index.end()) {
        throw InputError("network JSON: edge " + std::to_string(s) + "->" + std::to_string(d) +
                         " references an unknown node");
      }
      edges.push_back({is->second, id->second, e.at("rate").get<double>()});
    }
    return DependenceGraph(std::move(nodes), std::move(edges));
  } catch (const nlohmann::json::exception& ex) {
    throw InputError(std::string("network JSON: ") + ex.what());
  }
}

nlohmann::json graph_to_json(const DependenceGraph& g) {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& p = g.node(i);
    nodes.push_back({{"id", i},
                     {"lambda", p.lambda},
                     {"delta", p.delta},
                     {"c", p.cost},
                     {"kappa", p.kappa},
                     {"beta_exp", p.breach_exp}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : g.edges()) edges.push_back({{"src", e.src}, {"dst", e.dst}, {"rate", e.rate}});
  return {{"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

// ---------------------------------------------------------------------------

std::vector<std::vector<NodeId>> weak_components(const DependenceGraph& g) {
  const std::size_t n = g.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& e : g.edges()) {
    const auto a = find(e.src), b = find(e.dst);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::vector<std::vector<NodeId>> comps;
  std::unordered_map<std::size_t, std::size_t> slot;
  for (NodeId i = 0; i < n; ++i) {
    auto [it, fresh] = slot.emplace(find(i), comps.size());
    if (fresh) comps.emplace_back();
    comps[it->second].push_back(i);
  }
  return comps;
}

void require_weakly_connected(const DependenceGraph& g) {
  if (g.size() == 0) throw InputError("graph has no nodes");
  const auto comps = weak_components(g);
  if (comps.size() == 1) return;
  std::ostringstream os;
  os << "graph is not weakly connected: " << comps.size() << " components";
  for (std::size_t c = 0; c < comps.size(); ++c) {
    os << "\n  component " << c << " (" << comps[c].size() << " nodes):";
    const std::size_t shown = std::min<std::size_t>(comps[c].size(), 12);
    for (std::size_t k = 0; k < shown; ++k) os << ' ' << comps[c][k];
    if (shown < comps[c].size()) os << " ...";
  }
  throw InputError(os.str());
}

std::size_t Condensation::max_level() const {
  return level.empty() ? 0 : *std::max_element(level.begin(), level.end());
}

Condensation condense(const DependenceGraph& g) {
  const std::size_t n = g.size();
  constexpr std::size_t kUnvisited = static_cast<std::size_t>(-1);

  // Iterative Tarjan. Components come out in reverse topological order.
  std::vector<std::size_t> index(n, kUnvisited), low(n, 0), comp(n, kUnvisited);
  std::vector<bool> on_stack(n, false);
  std::vector<NodeId> stack;
  std::vector<std::pair<NodeId, std::size_t>> call;  // node, next out-edge position
  std::vector<std::vector<NodeId>> found;
  std::size_t counter = 0;

  for (NodeId root = 0; root < n; ++root) {
    if (index[root] != kUnvisited) continue;
    call.emplace_back(root, 0);
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack[root] = true;
    while (!call.empty()) {
      auto& [v, pos] = call.back();
      const auto& outs = g.out_edges(v);
      if (pos < outs.size()) {
        const NodeId w = g.edges()[outs[pos++]].dst;
        if (index[w] == kUnvisited) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack[w] = true;
          call.emplace_back(w, 0);
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
        continue;
      }
      if (low[v] == index[v]) {
        std::vector<NodeId> members;
        NodeId w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          comp[w] = found.size();
          members.push_back(w);
        } while (w != v);
        std::sort(members.begin(), members.end());
        found.push_back(std::move(members));
      }
      const NodeId done = v;
      call.pop_back();
      if (!call.empty()) low[call.back().first] = std::min(low[call.back().first], low[done]);
    }
  }

  Condensation c;
  const std::size_t m = found.size();
  c.msccs.resize(m);
  for (std::size_t k = 0; k < m; ++k) c.msccs[k] = std::move(found[m - 1 - k]);
  c.component_of.resize(n);
  for (NodeId i = 0; i < n; ++i) c.component_of[i] = m - 1 - comp[i];

  std::set<std::pair<std::size_t, std::size_t>> dag;
  for (const auto& e : g.edges()) {
    const auto a = c.component_of[e.src], b = c.component_of[e.dst];
    if (a != b) dag.emplace(a, b);
  }
  c.dag.assign(dag.begin(), dag.end());

  // Component ids are topologically sorted, so one forward pass settles the
  // longest-path levels and the exposure labels.
  std::vector<std::vector<std::size_t>> preds(m);
  for (const auto& [a, b] : c.dag) preds[b].push_back(a);
  c.level.assign(m, 0);
  c.exposed.assign(m, false);
  for (std::size_t v = 0; v < m; ++v) {
    bool exposed = std::any_of(c.msccs[v].begin(), c.msccs[v].end(),
                               [&](NodeId i) { return g.node(i).lambda > 0; });
    for (auto u : preds[v]) {
      c.level[v] = std::max(c.level[v], c.level[u] + 1);
      exposed = exposed || c.exposed[u];
    }
    c.exposed[v] = exposed;
  }
  c.order.resize(m);
  std::iota(c.order.begin(), c.order.end(), 0);
  std::stable_sort(c.order.begin(), c.order.end(),
                   [&](std::size_t a, std::size_t b) { return c.level[a] < c.level[b]; });
  return c;
}

// ---------------------------------------------------------------------------

std::size_t default_max_degree(std::size_t size) {
  return static_cast<std::size_t>(std::ceil(3.0 * std::log(static_cast<double>(size))));
}

namespace {

bool links_connected(std::size_t n, const std::vector<std::pair<NodeId, NodeId>>& links) {
  std::vector<std::vector<NodeId>> adj(n);
  for (auto [a, b] : links) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<bool> seen(n, false);
  std::vector<NodeId> todo{0};
  seen[0] = true;
  std::size_t reached = 1;
  while (!todo.empty()) {
    const NodeId v = todo.back();
    todo.pop_back();
    for (NodeId w : adj[v]) {
      if (!seen[w]) {
        seen[w] = true;
        ++reached;
        todo.push_back(w);
      }
    }
  }
  return reached == n;
}

// One pass of stub matching. Each stub picks a uniformly random partner among
// the remaining stubs; partners that would create a self-loop or a multi-edge
// are rejected and redrawn. Fails when some stub has no admissible partner.
bool match_stubs(const std::vector<std::size_t>& degrees, std::mt19937_64& rng,
                 std::vector<std::pair<NodeId, NodeId>>& links) {
  std::vector<NodeId> stubs;
  for (NodeId i = 0; i < degrees.size(); ++i) stubs.insert(stubs.end(), degrees[i], i);
  std::shuffle(stubs.begin(), stubs.end(), rng);
  std::unordered_set<std::uint64_t> used;
  links.clear();
  while (!stubs.empty()) {
    const NodeId a = stubs.back();
    stubs.pop_back();
    std::vector<std::size_t> candidates;
    for (std::size_t k = 0; k < stubs.size(); ++k) {
      const NodeId b = stubs[k];
      if (b != a && !used.count(pair_key(std::min(a, b), std::max(a, b)))) candidates.push_back(k);
    }
    if (candidates.empty()) return false;
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    const std::size_t k = candidates[pick(rng)];
    const NodeId b = stubs[k];
    stubs[k] = stubs.back();
    stubs.pop_back();
    used.insert(pair_key(std::min(a, b), std::max(a, b)));
    links.emplace_back(std::min(a, b), std::max(a, b));
  }
  return true;
}

}  // namespace

ScaleFreeTopology generate_scale_free_topology(std::size_t size, double power, std::size_t min_deg,
                                               std::size_t max_deg, std::uint64_t seed) {
  if (size < 2) throw InputError("scale-free generator: size must be >= 2");
  if (min_deg < 1) throw InputError("scale-free generator: min degree must be >= 1");
  if (max_deg < min_deg) throw InputError("scale-free generator: max degree below min degree");
  if (!std::isfinite(power)) throw InputError("scale-free generator: power must be finite");

  ScaleFreeTopology topo;
  topo.size = size;
  if (size == 2) {
    topo.degrees = {1, 1};
    topo.links = {{0, 1}};
    topo.attempts = 1;
    return topo;
  }

  // A simple graph cannot have degree >= size.
  const std::size_t hi = std::min(max_deg, size - 1);
  const std::size_t lo = std::min(min_deg, hi);
  std::vector<double> weights;
  for (std::size_t k = lo; k <= hi; ++k) weights.push_back(std::pow(static_cast<double>(k), -power));

  std::mt19937_64 rng(seed);
  constexpr std::size_t kMaxAttempts = 100;
  for (std::size_t attempt = 1; attempt <= kMaxAttempts; ++attempt) {
    std::discrete_distribution<std::size_t> draw(weights.begin(), weights.end());
    std::vector<std::size_t> deg(size);
    std::size_t total = 0;
    for (auto& d : deg) {
      d = lo + draw(rng);
      total += d;
    }
    if (total % 2 == 1) {
      // Parity fix: one extra stub on the first node that can take it.
      auto it = std::find_if(deg.begin(), deg.end(), [&](std::size_t d) { return d < hi; });
      if (it != deg.end()) {
        ++*it;
      } else {
        --deg.front();
      }
    }
    std::vector<std::pair<NodeId, NodeId>> links;
    if (!match_stubs(deg, rng, links)) continue;
    if (!links_connected(size, links)) continue;
    std::sort(links.begin(), links.end());
    topo.degrees = std::move(deg);
    topo.links = std::move(links);
    topo.attempts = attempt;
    return topo;
  }
  throw NumericError("scale-free generator: no simple connected realization after " +
                     std::to_string(kMaxAttempts) + " attempts");
}

std::vector<Edge> generate_scale_free(std::size_t size, double power, std::size_t min_deg,
                                      std::size_t max_deg, std::uint64_t seed, double rate_lo,
                                      double rate_hi) {
  if (!(rate_lo >= 0 && rate_hi >= rate_lo)) throw InputError("scale-free generator: bad rate range");
  const auto topo = generate_scale_free_topology(size, power, min_deg, max_deg, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> rate(rate_lo, rate_hi);
  std::vector<Edge> edges;
  edges.reserve(topo.links.size() * 2);
  for (auto [a, b] : topo.links) {
    edges.push_back({a, b, rate(rng)});
    edges.push_back({b, a, rate(rng)});
  }
  return edges;
}

DependenceGraph add_cross_edges(const DependenceGraph& g, const std::vector<NodeId>& from,
                                const std::vector<NodeId>& to, std::size_t count,
                                std::pair<double, double> rate_range, std::uint64_t seed) {
  if (count == 0) return g;
  const auto [lo, hi] = rate_range;
  if (!(lo >= 0 && hi >= lo)) throw InputError("add_cross_edges: bad rate range");
  std::unordered_set<NodeId> from_set(from.begin(), from.end());
  for (NodeId v : to) {
    if (from_set.count(v)) throw InputError("add_cross_edges: source and target sets overlap");
  }
  std::unordered_set<std::uint64_t> existing;
  for (const auto& e : g.edges()) existing.insert(pair_key(e.src, e.dst));

  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (NodeId a : from) {
    for (NodeId b : to) {
      if (a >= g.size() || b >= g.size()) throw InputError("add_cross_edges: node out of range");
      if (!existing.count(pair_key(a, b))) pairs.emplace_back(a, b);
    }
  }
  if (count > pairs.size()) {
    throw InputError("add_cross_edges: requested " + std::to_string(count) + " edges but only " +
                     std::to_string(pairs.size()) + " pairs are available");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> rate(lo, hi);
  std::vector<Edge> extra;
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pairs.size() - 1);
    std::swap(pairs[k], pairs[pick(rng)]);
    extra.push_back({pairs[k].first, pairs[k].second, rate(rng)});
  }
  return g.with_added_edges(extra);
}

}  // namespace sisinvest
