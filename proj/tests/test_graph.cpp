#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "sisinvest/errors.hpp"
#include "sisinvest/graph.hpp"

using namespace sisinvest;

namespace {

// Longest path (in edges) from any in-degree-0 vertex, by enumerating every
// path of the condensed DAG.
std::vector<std::size_t> brute_force_levels(std::size_t m, const std::vector<std::pair<std::size_t, std::size_t>>& dag) {
  std::vector<std::vector<std::size_t>> out(m);
  std::vector<std::size_t> indeg(m, 0);
  for (auto [a, b] : dag) {
    out[a].push_back(b);
    ++indeg[b];
  }
  std::vector<std::size_t> best(m, 0);
  std::function<void(std::size_t, std::size_t)> walk = [&](std::size_t v, std::size_t len) {
    best[v] = std::max(best[v], len);
    for (auto w : out[v]) walk(w, len + 1);
  };
  for (std::size_t v = 0; v < m; ++v) {
    if (indeg[v] == 0) walk(v, 0);
  }
  return best;
}

// Reachability closure by repeated relaxation.
std::vector<std::vector<bool>> reach(const DependenceGraph& g) {
  const std::size_t n = g.size();
  std::vector<std::vector<bool>> r(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) r[i][i] = true;
  for (const auto& e : g.edges()) r[e.src][e.dst] = true;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      if (r[i][k])
        for (std::size_t j = 0; j < n; ++j)
          if (r[k][j]) r[i][j] = true;
  return r;
}

DependenceGraph random_digraph(std::mt19937_64& rng, std::size_t n, double density) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<NodeParams> nodes(n);
  for (auto& p : nodes) p.lambda = u(rng) < 0.2 ? 0.1 : 0.0;
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && u(rng) < density) edges.push_back({i, j, u(rng)});
  return DependenceGraph(nodes, edges);
}

}  // namespace

TEST_CASE("parse_edge_list: smallest cycle and dedup") {
  auto a = parse_edge_list("0 1\n1 0");
  CHECK(a.node_count == 2);
  CHECK(a.edges.size() == 2);

  auto b = parse_edge_list("# c\n0 1\n0 1");
  CHECK(b.node_count == 2);
  CHECK(b.edges.size() == 1);
  CHECK(b.duplicates_dropped == 1);
}

TEST_CASE("parse_edge_list: compaction keeps first-appearance order") {
  auto s = parse_edge_list("# header\n\n  17\t4\n4 99\r\n99 17\n");
  REQUIRE(s.node_count == 3);
  CHECK(s.original_ids == std::vector<std::int64_t>{17, 4, 99});
  CHECK(s.edges == std::vector<std::pair<NodeId, NodeId>>{{0, 1}, {1, 2}, {2, 0}});
}

TEST_CASE("parse_edge_list: errors and self-loops") {
  auto s = parse_edge_list("1 1\n1 2\n2 2\n");
  CHECK(s.self_loops_dropped == 2);
  CHECK(s.edges.size() == 1);

  try {
    parse_edge_list("0 1\n1 x\n");
    FAIL("expected a parse error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_edge_list("0 1 2\n"), InputError);
  CHECK_THROWS_AS(parse_edge_list("0\n"), InputError);
}

TEST_CASE("DependenceGraph validation and infection matrix orientation") {
  DependenceGraph g({{}, {}, {}}, {{0, 1, 0.3}, {2, 1, 0.7}});
  const auto& b = g.infection_matrix();
  CHECK(b.coeff(1, 0) == doctest::Approx(0.3));
  CHECK(b.coeff(1, 2) == doctest::Approx(0.7));
  CHECK(b.coeff(0, 1) == 0.0);

  CHECK_THROWS_AS(DependenceGraph({{}, {}}, {{0, 0, 1.0}}), InputError);
  CHECK_THROWS_AS(DependenceGraph({{}, {}}, {{0, 1, -1.0}}), InputError);
  CHECK_THROWS_AS(DependenceGraph({{}, {}}, {{0, 1, 1.0}, {0, 1, 2.0}}), InputError);
  CHECK_THROWS_AS(DependenceGraph({{}, {}}, {{0, 5, 1.0}}), InputError);
  NodeParams bad;
  bad.delta = 0;
  CHECK_THROWS_AS(DependenceGraph({bad}, {}), InputError);
}

TEST_CASE("weak connectivity is enforced with a component report") {
  DependenceGraph g({{}, {}, {}, {}}, {{0, 1, 1.0}, {2, 3, 1.0}});
  CHECK(weak_components(g).size() == 2);
  try {
    require_weakly_connected(g);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2 components") != std::string::npos);
    CHECK(msg.find("component 1") != std::string::npos);
  }
  CHECK_NOTHROW(require_weakly_connected(fixtures::chain2()));
}

TEST_CASE("condense: fixed examples") {
  SUBCASE("2-cycle is one level-0 component") {
    auto c = condense(fixtures::cycle2());
    CHECK(c.size() == 1);
    CHECK(c.level[0] == 0);
  }
  SUBCASE("chain with shortcut gets longest-path levels") {
    DependenceGraph g({{}, {}, {}}, {{0, 1, 1}, {1, 2, 1}, {0, 2, 1}});
    auto c = condense(g);
    REQUIRE(c.size() == 3);
    CHECK(c.level[c.component_of[0]] == 0);
    CHECK(c.level[c.component_of[1]] == 1);
    CHECK(c.level[c.component_of[2]] == 2);
    CHECK(c.max_level() == 2);
  }
  SUBCASE("exposure propagates downstream only") {
    std::vector<NodeParams> nodes(3);
    nodes[1].lambda = 0.1;
    DependenceGraph g(nodes, {{0, 1, 1}, {1, 2, 1}});
    auto c = condense(g);
    CHECK_FALSE(c.node_exposed(0));
    CHECK(c.node_exposed(1));
    CHECK(c.node_exposed(2));
  }
}

TEST_CASE("condense: two scale-free blocks with cross edges") {
  fixtures::TwoBlockOptions o;
  auto g = fixtures::two_block(o);
  auto c = condense(g);
  REQUIRE(c.size() == 2);
  const auto c1 = c.component_of[0];
  const auto c2 = c.component_of[o.size1];
  CHECK(c.msccs[c1].size() == 50);
  CHECK(c.msccs[c2].size() == 150);
  CHECK(c.level[c1] == 0);
  CHECK(c.level[c2] == 1);
  CHECK_FALSE(c.exposed[c1]);
  CHECK(c.exposed[c2]);
}

TEST_CASE("condense: structural properties on random digraphs") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    const double density = 0.05 + 0.25 * (rng() % 100) / 100.0;
    auto g = random_digraph(rng, n, density);
    auto c = condense(g);
    auto r = reach(g);

    // Partition of the node set.
    std::vector<int> count(n, 0);
    for (const auto& comp : c.msccs)
      for (auto i : comp) ++count[i];
    CHECK(std::all_of(count.begin(), count.end(), [](int k) { return k == 1; }));

    // Same component iff mutually reachable (maximality and strong connectivity).
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        CHECK((c.component_of[i] == c.component_of[j]) == (r[i][j] && r[j][i]));

    // DAG edges go forward in the id order, levels respect edges.
    for (auto [a, b] : c.dag) {
      CHECK(a < b);
      CHECK(c.level[b] >= c.level[a] + 1);
    }
    if (c.size() <= 8) CHECK(c.level == brute_force_levels(c.size(), c.dag));

    // Exposed iff reachable from a node with positive lambda (including itself).
    for (std::size_t i = 0; i < n; ++i) {
      bool exposed = false;
      for (std::size_t j = 0; j < n; ++j) exposed = exposed || (g.node(j).lambda > 0 && r[j][i]);
      CHECK(c.node_exposed(i) == exposed);
    }

    // order is topological and sorted by level.
    for (std::size_t k = 1; k < c.order.size(); ++k) CHECK(c.level[c.order[k - 1]] <= c.level[c.order[k]]);
  }
}

TEST_CASE("condense is idempotent on its condensed graph") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto g = random_digraph(rng, 10, 0.15);
    auto c = condense(g);
    std::vector<Edge> dag_edges;
    for (auto [a, b] : c.dag) dag_edges.push_back({a, b, 1.0});
    DependenceGraph h(std::vector<NodeParams>(c.size()), dag_edges);
    auto c2 = condense(h);
    CHECK(c2.size() == c.size());
    for (std::size_t v = 0; v < c.size(); ++v) {
      CHECK(c2.msccs[c2.component_of[v]].size() == 1);
      CHECK(c2.level[c2.component_of[v]] == c.level[v]);
    }
  }
}

TEST_CASE("condense handles a long chain without recursion") {
  const std::size_t n = 200000;
  std::vector<Edge> edges;
  for (std::size_t i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1, 1.0});
  edges.push_back({n - 1, 0, 1.0});
  DependenceGraph g(std::vector<NodeParams>(n), edges);
  auto c = condense(g);
  CHECK(c.size() == 1);
}

TEST_CASE("generate_scale_free: strongly connected and deterministic") {
  const auto edges = generate_scale_free(50, 1.5, 2, default_max_degree(50), 42);
  CHECK(default_max_degree(50) == 12);
  DependenceGraph g(std::vector<NodeParams>(50), edges);
  CHECK(condense(g).size() == 1);
  CHECK(edges == generate_scale_free(50, 1.5, 2, 12, 42));
  CHECK_FALSE(edges == generate_scale_free(50, 1.5, 2, 12, 43));
  for (const auto& e : edges) {
    CHECK(e.rate >= 0.01);
    CHECK(e.rate <= 1.0);
  }
}

TEST_CASE("generate_scale_free: size 2 is the 2-cycle") {
  for (double power : {0.5, 1.5, 3.0}) {
    auto edges = generate_scale_free(2, power, 2, 5, 1);
    REQUIRE(edges.size() == 2);
    CHECK(edges[0].src == edges[1].dst);
    CHECK(edges[0].dst == edges[1].src);
  }
}

TEST_CASE("generate_scale_free: realized degrees equal the drawn sequence") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::size_t n = 20 + seed * 7;
    auto topo = generate_scale_free_topology(n, 1.5, 2, default_max_degree(n), seed);
    std::vector<std::size_t> counted(n, 0);
    std::set<std::pair<NodeId, NodeId>> unique;
    for (auto [a, b] : topo.links) {
      CHECK(a != b);
      ++counted[a];
      ++counted[b];
      unique.insert({a, b});
    }
    CHECK(unique.size() == topo.links.size());
    CHECK(counted == topo.degrees);
    const std::size_t total = std::accumulate(topo.degrees.begin(), topo.degrees.end(), std::size_t{0});
    CHECK(total % 2 == 0);
    for (auto d : topo.degrees) {
      CHECK(d >= 2);
      CHECK(d <= default_max_degree(n));
    }
  }
}

TEST_CASE("generate_scale_free: input validation") {
  CHECK_THROWS_AS(generate_scale_free(1, 1.5, 2, 3, 1), InputError);
  CHECK_THROWS_AS(generate_scale_free(10, 1.5, 0, 3, 1), InputError);
  CHECK_THROWS_AS(generate_scale_free(10, 1.5, 4, 3, 1), InputError);
}

TEST_CASE("add_cross_edges") {
  auto e1 = generate_scale_free(5, 1.5, 2, 4, 1);
  std::vector<Edge> edges = e1;
  for (auto e : generate_scale_free(6, 1.5, 2, 4, 2)) edges.push_back({e.src + 5, e.dst + 5, e.rate});
  DependenceGraph g(std::vector<NodeParams>(11), edges);
  std::vector<NodeId> from{0, 1, 2, 3, 4}, to{5, 6, 7, 8, 9, 10};

  SUBCASE("count 0 is the identity") {
    auto h = add_cross_edges(g, from, to, 0, {0.01, 1.0}, 3);
    CHECK(h.edges() == g.edges());
  }
  SUBCASE("edges are distinct, one-directional and never merge components") {
    auto h = add_cross_edges(g, from, to, 10, {0.2, 0.3}, 3);
    CHECK(h.edge_count() == g.edge_count() + 10);
    std::set<std::pair<NodeId, NodeId>> added;
    for (std::size_t k = g.edge_count(); k < h.edge_count(); ++k) {
      const auto& e = h.edges()[k];
      CHECK(e.src < 5);
      CHECK(e.dst >= 5);
      CHECK(e.rate >= 0.2);
      CHECK(e.rate <= 0.3);
      added.insert({e.src, e.dst});
    }
    CHECK(added.size() == 10);
    CHECK(condense(h).size() == 2);
  }
  SUBCASE("all pairs can be taken, one more cannot") {
    CHECK(add_cross_edges(g, from, to, 30, {0.1, 0.1}, 1).edge_count() == g.edge_count() + 30);
    CHECK_THROWS_AS(add_cross_edges(g, from, to, 31, {0.1, 0.1}, 1), InputError);
  }
}

TEST_CASE("network JSON round trip") {
  auto g = fixtures::two_block({.size1 = 6, .size2 = 8, .cross = 3, .attacked = 2});
  auto j = graph_to_json(g);
  auto h = graph_from_json(j);
  CHECK(h.nodes() == g.nodes());
  CHECK(h.edges() == g.edges());

  nlohmann::json bad = {{"nodes", {{{"id", 3}}, {{"id", 3}}}}, {"edges", nlohmann::json::array()}};
  CHECK_THROWS_AS(graph_from_json(bad), InputError);
  nlohmann::json dangling = {{"nodes", {{{"id", 0}}}}, {"edges", {{{"src", 0}, {"dst", 9}, {"rate", 1.0}}}}};
  CHECK_THROWS_AS(graph_from_json(dangling), InputError);
}
