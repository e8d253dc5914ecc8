#include <cmath>
#include <functional>

#include "doctest.h"
#include "fixtures.hpp"
#include "grid_search.hpp"
#include "sisinvest/errors.hpp"
#include "sisinvest/relax.hpp"
#include "sisinvest/rgm.hpp"

using namespace sisinvest;
using fixtures::node;

namespace {

/// Bidirectional pair with c = nu * B^T 1, kappa = 1/delta.
DependenceGraph pair_graph(double nu, double b01 = 0.4, double b10 = 0.7) {
  const Eigen::VectorXd out(Eigen::Vector2d(b01, b10));
  return DependenceGraph({node(0.1, 0.2, nu * out[0], 5.0), node(0.0, 0.3, nu * out[1], 1.0 / 0.3)},
                         {{0, 1, b01}, {1, 0, b10}});
}

fixtures::TwoBlockOptions small_two_block(double nu, std::uint64_t seed = 4) {
  fixtures::TwoBlockOptions o;
  o.size1 = 12;
  o.size2 = 24;
  o.cross = 4;
  o.attacked = 4;
  o.nu = nu;
  o.c_rand_weight = 0.0;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("program dimensions follow the sparsity pattern of B") {
  {
    InvestmentProblem prob(DependenceGraph({node(0.1, 0.1, 1.0)}, {}), PerturbationScheme::uniform(1e-3));
    const auto prog = build_relaxation(prob);
    CHECK(prog.variable_count() == 4);
    CHECK(prog.u_count() == 0);
    CHECK(prog.equality_count() == 1);
    CHECK(prog.equality.rows() == 1);
  }
  {
    InvestmentProblem prob(fixtures::chain2(), PerturbationScheme::uniform(1e-3));
    CHECK(build_relaxation(prob).u_count() == 1);
  }
  {
    const auto g = fixtures::two_block({});
    InvestmentProblem prob(g, PerturbationScheme::uniform(1e-3));
    const auto prog = build_relaxation(prob);
    CHECK(prog.u_count() == g.edge_count());
    CHECK(prog.variable_count() == 4 * g.size() + g.edge_count());
    // Two bidirectional blocks plus ten one-way cross edges.
    std::size_t cross = 0;
    for (const auto& e : g.edges()) cross += (e.src < 50) != (e.dst < 50);
    CHECK(cross == 10);
    CHECK((g.edge_count() - cross) % 2 == 0);
  }
}

TEST_CASE("nonconvex investment cost is rejected at build time") {
  auto nodes = pair_graph(1.0).nodes();
  nodes[1].breach_exp = 1.5;
  InvestmentProblem prob(pair_graph(1.0).with_nodes(nodes), PerturbationScheme::uniform(1e-3));
  CHECK_THROWS_AS(build_relaxation(prob), InputError);

  InvestmentProblem neg(pair_graph(1.0), PerturbationScheme::uniform(1e-3), InvestmentCost{Eigen::Vector2d(1.0, -1.0)});
  CHECK_THROWS_AS(build_relaxation(neg), InputError);

  InvestmentProblem ok(pair_graph(1.0), PerturbationScheme::uniform(1e-3));
  CHECK_THROWS_AS(build_relaxation(ok, DomainSpec::box(1.0)), InputError);
}

TEST_CASE("single node optimum matches a grid search over s") {
  const double eps = 1e-3;
  InvestmentProblem prob(DependenceGraph({node(0.1, 0.1, 10.0, 10.0)}, {}), PerturbationScheme::uniform(eps));
  const auto prog = build_relaxation(prob);
  const auto sol = solve_barrier(prog);
  CHECK(sol.duality_gap <= 1e-8 * static_cast<double>(prog.inequality_count()));
  double best = INFINITY;
  for (int k = 0; k <= 200000; ++k) {
    const double s = 1e-5 * k;
    const double lam = 0.1 + eps;
    best = std::min(best, s + 10.0 * lam / (lam + 0.1 * (1 + 10 * s)));
  }
  CHECK(sol.value == doctest::Approx(best).epsilon(1e-8));
  CHECK(sol.value <= best + 1e-8);
}

TEST_CASE("t and U constraints are active at the optimum") {
  for (double nu : {0.9, 1.1}) {
    InvestmentProblem prob(fixtures::two_block(small_two_block(nu)), PerturbationScheme::uniform(1e-3));
    const auto prog = build_relaxation(prob);
    const auto sol = solve_barrier(prog);
    for (Eigen::Index i = 0; i < sol.t.size(); ++i) {
      const double bound = prog.lambda[i] * std::exp(sol.y[i]);
      CHECK(sol.t[i] - bound <= 1e-6 * sol.t[i]);
    }
    for (std::size_t k = 0; k < prog.edges.size(); ++k) {
      const auto& e = prog.edges[k];
      const double bound = e.rate * std::exp(sol.y[static_cast<Eigen::Index>(e.dst)] - sol.y[static_cast<Eigen::Index>(e.src)]);
      CHECK(sol.u[static_cast<Eigen::Index>(k)] - bound <= 1e-6 * bound);
    }
    CHECK(sol.equality_residual <= 1e-10);
    CHECK((sol.sigma.array() > 0).all());
  }
}

TEST_CASE("equality multipliers equal the t and U multipliers") {
  // Checked at mu = 1e-8: below that the slacks fall under the rounding
  // resolution of t and u and mu / slack is no longer a usable estimate.
  BarrierSettings bs;
  bs.mu_final = 1e-8;
  for (double nu : {0.9, 1.1}) {
    InvestmentProblem prob(fixtures::two_block(small_two_block(nu)), PerturbationScheme::uniform(1e-2));
    const auto prog = build_relaxation(prob);
    const auto sol = solve_barrier(prog, bs);
    for (Eigen::Index i = 0; i < sol.sigma.size(); ++i) {
      CHECK(std::abs(sol.sigma[i] - sol.mu_t[i]) <= 1e-6 * std::max(1.0, sol.sigma[i]));
    }
    for (std::size_t k = 0; k < prog.edges.size(); ++k) {
      const double sig = sol.sigma[static_cast<Eigen::Index>(prog.edges[k].dst)];
      CHECK(std::abs(sig - sol.phi[static_cast<Eigen::Index>(k)]) <= 1e-6 * std::max(1.0, sig));
    }
  }
}

TEST_CASE("recovered point is feasible and consistent with the equilibrium solver") {
  std::vector<InvestmentProblem> probs;
  probs.emplace_back(fixtures::chain2().with_nodes({node(0.1, 0.1, 1.0), node(0.0, 0.1, 2.0)}),
                     PerturbationScheme::uniform(1e-3));
  for (double nu : {0.9, 1.1}) probs.emplace_back(fixtures::two_block(small_two_block(nu)), PerturbationScheme::uniform(1e-4));
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    probs.emplace_back(fixtures::random_instance(seed).graph, PerturbationScheme::uniform(1e-2));
  }
  for (const auto& prob : probs) {
    const auto prog = build_relaxation(prob);
    const auto sol = solve_barrier(prog);
    const auto rec = recover_feasible(prog, sol);
    CHECK(rec.ep_residual <= 1e-8);
    CHECK((rec.d.array() >= 1.0).all());
    CHECK(sol.value <= rec.value + 1e-8);
    CHECK(rec.in_domain);
    CHECK(objective(prob, rec.s) == doctest::Approx(rec.value).epsilon(1e-6));
    // p' = e^-y never exceeds p+.
    CHECK((rec.p.array() <= sol.p.array() + 1e-12).all());
  }
}

TEST_CASE("tight relaxation recovers d+ itself") {
  // Exact instance: p+ = e^-y+ at the optimum, so the correction term vanishes.
  InvestmentProblem prob(fixtures::two_block(small_two_block(1.1)), PerturbationScheme::uniform(1e-3));
  const auto prog = build_relaxation(prob);
  const auto sol = solve_barrier(prog);
  const auto rec = recover_feasible(prog, sol);
  CHECK((rec.d - sol.d).lpNorm<Eigen::Infinity>() <= 1e-6);
  CHECK((rec.p - sol.p).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("exactness condition") {
  SUBCASE("no edges is always exact") {
    InvestmentProblem prob(DependenceGraph({node(0.1, 0.1, 0.0), node(0.2, 0.5, 0.0)}, {}), PerturbationScheme::uniform(1e-3));
    const auto ex = check_exactness(build_relaxation(prob));
    CHECK(ex.verdict == ExactnessVerdict::exact);
    CHECK(ex.margins.isZero());
  }
  SUBCASE("c = nu B^T 1 with kappa = 1/delta is exact iff nu >= 1") {
    for (double nu : {0.5, 0.9, 0.99, 1.0, 1.1, 1.5}) {
      fixtures::TwoBlockOptions o;
      o.nu = nu;
      o.c_rand_weight = 0.0;
      InvestmentProblem prob(fixtures::two_block(o), PerturbationScheme::uniform(1e-3));
      const auto ex = check_exactness(build_relaxation(prob));
      CHECK((ex.verdict == ExactnessVerdict::exact) == (nu >= 1.0));
      CHECK(ex.margins.size() == 200);
    }
  }
  SUBCASE("pair: margins are B^T 1 (1 - nu)") {
    const auto g = pair_graph(0.8);
    InvestmentProblem prob(g, PerturbationScheme::uniform(1e-3));
    const auto ex = check_exactness(build_relaxation(prob));
    CHECK(ex.verdict == ExactnessVerdict::not_exact);
    CHECK(ex.margins[0] == doctest::Approx(0.4 * 0.2));
    CHECK(ex.margins[1] == doctest::Approx(0.7 * 0.2));
  }
  SUBCASE("concave breach exponents need a bounded domain") {
    auto nodes = pair_graph(1.0).nodes();
    nodes[0].breach_exp = 0.5;
    const auto g = pair_graph(1.0).with_nodes(nodes);
    InvestmentProblem open(g, PerturbationScheme::uniform(1e-3));
    CHECK(check_exactness(build_relaxation(open)).verdict == ExactnessVerdict::inconclusive);

    // Budget: d_0 <= (1 + kappa S)^b, grad w~_0 = d^{1/b - 1} / (b kappa).
    InvestmentProblem budget(g, PerturbationScheme::uniform(1e-3), {}, FeasibleSet::budget_simplex(0.6));
    const auto ex = check_exactness(build_relaxation(budget));
    REQUIRE(ex.verdict != ExactnessVerdict::inconclusive);
    const double d_sup = std::sqrt(1 + 5.0 * 0.6);
    const double grad0 = d_sup / (0.5 * 5.0);
    CHECK(ex.margins[1] == doctest::Approx(0.7 * grad0 / 0.2 - 0.7));
  }
}

TEST_CASE("exact instances close the gap") {
  for (double nu : {1.0, 1.1, 1.5}) {
    InvestmentProblem prob(fixtures::two_block(small_two_block(nu, 9)), PerturbationScheme::uniform(1e-3));
    const auto prog = build_relaxation(prob);
    REQUIRE(check_exactness(prog).verdict == ExactnessVerdict::exact);
    const auto sol = solve_barrier(prog);
    const auto rec = recover_feasible(prog, sol);
    BoundsReport r{sol.value, rec.value};
    r.finalize();
    CHECK(r.gap_rel <= 1e-6);
  }
}

TEST_CASE("lower bound never exceeds the RGM value") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    for (const auto& S : {FeasibleSet::orthant(), FeasibleSet::budget_simplex(0.4)}) {
      InvestmentProblem prob(fixtures::random_instance(seed).graph, PerturbationScheme::uniform(1e-2), {}, S);
      const auto prog = build_relaxation(prob);
      const auto sol = solve_barrier(prog);
      const auto rgm = solve_rgm(prob);
      CHECK(sol.value <= rgm.value + 1e-8);
      if (S.kind == FeasibleKind::budget_simplex) {
        double spent = 0;
        for (std::size_t i = 0; i < prog.n; ++i) spent += prog.investment_of(i, sol.d[static_cast<Eigen::Index>(i)]);
        CHECK(spent <= 0.4);
      }
    }
  }
}

TEST_CASE("small exact instances match an exhaustive grid search") {
  for (double nu : {1.0, 1.3}) {
    InvestmentProblem prob(pair_graph(nu), PerturbationScheme::uniform(1e-3));
    const auto prog = build_relaxation(prob);
    REQUIRE(check_exactness(prog).verdict == ExactnessVerdict::exact);
    const double lower = solve_barrier(prog).value;
    const auto grid = grid_search::minimize(prob);
    CHECK(std::abs(lower - grid.value) <= 1e-3);
    CHECK(lower <= grid.value + 1e-8);
  }
}

TEST_CASE("bounds report") {
  BoundsReport r{2.0, 3.0};
  r.finalize();
  CHECK(r.gap_rel == doctest::Approx(0.5));
  r.upper_rgm = 2.5;
  r.finalize();
  CHECK(r.upper() == 2.5);
  CHECK(r.gap_rel == doctest::Approx(0.25));
  BoundsReport small{0.1, 0.3};
  small.finalize();
  CHECK(small.gap_rel == doctest::Approx(0.2));
  const auto j = to_json(r);
  CHECK(j.at("upper_rgm").get<double>() == 2.5);
  CHECK(j.at("exact").get<bool>() == false);
  CHECK(j.contains("timings"));
  CHECK(to_json(small).at("upper_rgm").is_null());
}

TEST_CASE("barrier rejects bad settings") {
  InvestmentProblem prob(fixtures::chain2(), PerturbationScheme::uniform(1e-3));
  BarrierSettings bs;
  bs.mu_factor = 1.0;
  CHECK_THROWS_AS(solve_barrier(build_relaxation(prob), bs), InputError);
}
