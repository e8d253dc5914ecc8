#pragma once

// Shared instance builders for the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>

#include "sisinvest/graph.hpp"

namespace fixtures {

using sisinvest::DependenceGraph;
using sisinvest::Edge;
using sisinvest::NodeParams;

inline NodeParams node(double lambda, double delta = 0.1, double cost = 0.0, double kappa = 10.0,
                       double exp = 1.0) {
  return NodeParams{lambda, delta, cost, kappa, exp};
}

/// 0 (lambda=0.1) -> 1 (lambda=0), beta=0.5, delta=0.1.
inline DependenceGraph chain2() {
  return DependenceGraph({node(0.1), node(0.0)}, {{0, 1, 0.5}});
}

/// Symmetric 2-cycle, beta=0.5 both ways, delta=0.1, no attacks.
inline DependenceGraph cycle2() {
  return DependenceGraph({node(0.0), node(0.0)}, {{0, 1, 0.5}, {1, 0, 0.5}});
}

/// Dense-eigensolver spectral radius, independent of the library routine.
inline double dense_rho(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

struct RandomInstance {
  DependenceGraph graph;
  Eigen::VectorXd s;
  std::vector<std::vector<std::size_t>> blocks;
};

/// Weakly connected graph built from 3-5 strongly connected blocks joined by
/// forward edges. The first block never receives attacks, so accessible and
/// exposed nodes are both present. Blocks whose unattacked threshold ratio
/// rho(D^-1 B) lies in [0.8, 1.25] are rejected to keep ODE relaxation fast.
inline RandomInstance random_instance(std::uint64_t seed, std::size_t max_nodes = 30) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    const std::size_t nblocks = 3 + rng() % 3;
    std::vector<std::vector<std::size_t>> blocks;
    std::size_t n = 0;
    for (std::size_t b = 0; b < nblocks; ++b) {
      const std::size_t size = 1 + rng() % std::max<std::size_t>(1, std::min<std::size_t>(7, max_nodes / nblocks));
      std::vector<std::size_t> members;
      for (std::size_t k = 0; k < size; ++k) members.push_back(n++);
      blocks.push_back(members);
    }
    std::vector<NodeParams> nodes(n);
    std::vector<Edge> edges;
    std::vector<std::vector<bool>> has(n, std::vector<bool>(n, false));
    auto add = [&](std::size_t a, std::size_t b) {
      if (a == b || has[a][b]) return;
      has[a][b] = true;
      edges.push_back({a, b, 0.05 + 0.55 * u(rng)});
    };
    for (const auto& blk : blocks) {
      for (std::size_t k = 0; k + 1 < blk.size(); ++k) add(blk[k], blk[k + 1]);
      if (blk.size() > 1) add(blk.back(), blk.front());
      for (std::size_t extra = 0; extra < blk.size() / 2; ++extra) {
        add(blk[rng() % blk.size()], blk[rng() % blk.size()]);
      }
    }
    for (std::size_t b = 1; b < blocks.size(); ++b) {
      const auto& up = blocks[rng() % b];
      add(up[rng() % up.size()], blocks[b][rng() % blocks[b].size()]);
      if (u(rng) < 0.5) {
        const auto& up2 = blocks[rng() % b];
        add(up2[rng() % up2.size()], blocks[b][rng() % blocks[b].size()]);
      }
    }
    for (auto& p : nodes) {
      p.delta = 0.3 + 0.7 * u(rng);
      p.kappa = 1.0 / p.delta;
      p.cost = u(rng);
    }
    for (std::size_t b = 1; b < blocks.size(); ++b) {
      if (u(rng) < 0.5) nodes[blocks[b][rng() % blocks[b].size()]].lambda = 0.05 + 0.2 * u(rng);
    }
    if (std::none_of(nodes.begin(), nodes.end(), [](const NodeParams& p) { return p.lambda > 0; })) {
      nodes[blocks.back().front()].lambda = 0.1;
    }
    Eigen::VectorXd s(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = 2.0 * u(rng);

    bool ok = true;
    for (const auto& blk : blocks) {
      Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(blk.size()),
                                                static_cast<Eigen::Index>(blk.size()));
      for (const auto& e : edges) {
        auto a = std::find(blk.begin(), blk.end(), e.src);
        auto b = std::find(blk.begin(), blk.end(), e.dst);
        if (a != blk.end() && b != blk.end()) {
          const auto i = b - blk.begin();
          const NodeParams& p = nodes[e.dst];
          const double q = 1.0 / (1.0 + p.kappa * s[static_cast<Eigen::Index>(e.dst)]);
          m(i, a - blk.begin()) = e.rate * q / p.delta;
        }
      }
      const double rho = dense_rho(m);
      if (rho >= 0.8 && rho <= 1.25) ok = false;
    }
    if (!ok) continue;
    return {DependenceGraph(std::move(nodes), std::move(edges)), s, blocks};
  }
}

/// Two bidirectional scale-free blocks joined by one-way cross edges, with the
/// attack and cost settings of the two-component experiment.
struct TwoBlockOptions {
  std::size_t size1 = 50;
  std::size_t size2 = 150;
  std::size_t cross = 10;
  std::size_t attacked = 10;
  double attack_rate = 0.1;
  double delta = 0.1;
  double nu = 1.1;
  double c_rand_weight = 0.2;
  std::uint64_t seed = 1;
};

inline DependenceGraph two_block(const TwoBlockOptions& o) {
  using namespace sisinvest;
  auto e1 = generate_scale_free(o.size1, 1.5, 2, default_max_degree(o.size1), o.seed);
  auto e2 = generate_scale_free(o.size2, 1.5, 2, default_max_degree(o.size2), o.seed + 1);
  std::vector<Edge> edges = e1;
  for (auto e : e2) edges.push_back({e.src + o.size1, e.dst + o.size1, e.rate});
  const std::size_t n = o.size1 + o.size2;
  std::vector<NodeParams> nodes(n, node(0.0, o.delta, 0.0, 1.0 / o.delta));
  DependenceGraph g(nodes, edges);
  std::vector<NodeId> from, to;
  for (NodeId i = 0; i < o.size1; ++i) from.push_back(i);
  for (NodeId i = o.size1; i < n; ++i) to.push_back(i);
  g = add_cross_edges(g, from, to, o.cross, {0.01, 1.0}, o.seed + 2);

  std::mt19937_64 rng(o.seed + 3);
  std::shuffle(to.begin(), to.end(), rng);
  for (std::size_t k = 0; k < o.attacked && k < to.size(); ++k) nodes[to[k]].lambda = o.attack_rate;
  const Eigen::VectorXd out_rate = g.infection_matrix().transpose() * Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    nodes[i].cost = (o.nu + o.c_rand_weight * u(rng)) * out_rate[static_cast<Eigen::Index>(i)];
  }
  return g.with_nodes(nodes);
}

}  // namespace fixtures
