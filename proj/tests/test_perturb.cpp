#include <cmath>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "sisinvest/errors.hpp"
#include "sisinvest/perturb.hpp"
#include "sisinvest/problem.hpp"

using namespace sisinvest;
using fixtures::node;

TEST_CASE("sensitivity of a single node matches scalar calculus") {
  DependenceGraph g({node(0.1)}, {});
  const Eigen::VectorXd s = Eigen::VectorXd::Zero(1);
  const Eigen::VectorXd d = sensitivity_deps(g, s, PerturbationScheme::uniform(0.05));
  CHECK(d[0] == doctest::Approx(1.6).epsilon(1e-10));
  CHECK_THROWS_AS(sensitivity_deps(g, s, PerturbationScheme::uniform(0.0)), InputError);
}

TEST_CASE("sensitivity agrees with central differences and is positive") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const auto inst = fixtures::random_instance(seed);
    for (double eps : {1e-3, 1e-1}) {
      const auto scheme = PerturbationScheme::uniform(eps);
      const Eigen::VectorXd d = sensitivity_deps(inst.graph, inst.s, scheme);
      CHECK((d.array() > 0).all());
      const double h = 1e-6;
      const Eigen::VectorXd plus = stable_equilibrium(inst.graph, inst.s, eps + h).p_bar;
      const Eigen::VectorXd minus = stable_equilibrium(inst.graph, inst.s, eps - h).p_bar;
      const Eigen::VectorXd fd = (plus - minus) / (2 * h);
      CHECK((fd - d).lpNorm<Eigen::Infinity>() <= 1e-4 * d.lpNorm<Eigen::Infinity>());
    }
  }
}

TEST_CASE("sweep on the chain converges linearly to the closed form") {
  const auto g = fixtures::chain2();
  const Eigen::VectorXd s = Eigen::VectorXd::Zero(2);
  const auto sweep = sweep_equilibrium(g, s, {1e-2, 1e-4, 1e-6, 1e-8});
  CHECK(sweep.baseline[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sweep.baseline[1] == doctest::Approx(5.0 / 7.0).epsilon(1e-12));
  for (const auto& pt : sweep.points) {
    const double eps = pt.epsilon;
    const double p0 = (0.1 + eps) / (0.2 + eps);
    const double lam1 = eps + 0.5 * p0;
    CHECK(pt.p_bar[0] == doctest::Approx(p0).epsilon(1e-12));
    CHECK(pt.p_bar[1] == doctest::Approx(lam1 / (lam1 + 0.1)).epsilon(1e-12));
    CHECK(pt.deviation <= 10.0 * eps);
  }
  CHECK(sweep.points.back().deviation < 1e-6);
}

TEST_CASE("an accessible node below threshold vanishes with epsilon") {
  DependenceGraph g({node(0.0)}, {});
  const auto sweep = sweep_equilibrium(g, Eigen::VectorXd::Zero(1), {1e-2, 1e-4, 1e-6});
  CHECK(sweep.baseline[0] == 0.0);
  for (const auto& pt : sweep.points) CHECK(pt.p_bar[0] == doctest::Approx(pt.epsilon / (pt.epsilon + 0.1)));
}

TEST_CASE("sweeps are monotone in epsilon and continuous at zero") {
  const auto grid = log_grid(1e-1, 1e-8, 8);
  for (std::uint64_t seed = 11; seed <= 20; ++seed) {
    const auto inst = fixtures::random_instance(seed);
    const auto sweep = sweep_equilibrium(inst.graph, inst.s, grid);
    for (std::size_t k = 0; k + 1 < sweep.points.size(); ++k) {
      CHECK((sweep.points[k].p_bar.array() >= sweep.points[k + 1].p_bar.array() - 1e-12).all());
      CHECK(sweep.points[k].deviation >= sweep.points[k + 1].deviation);
    }
    CHECK(sweep.points.back().deviation < 1e-6);
  }
}

TEST_CASE("warm-started and cold sweeps agree") {
  const auto inst = fixtures::random_instance(5);
  const auto grid = default_epsilon_grid();
  const auto warm = sweep_equilibrium(inst.graph, inst.s, grid, PerturbationScheme::uniform(0), true);
  const auto cold = sweep_equilibrium(inst.graph, inst.s, grid, PerturbationScheme::uniform(0), false);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    CHECK((warm.points[k].p_bar - cold.points[k].p_bar).lpNorm<Eigen::Infinity>() <= 1e-10);
  }
}

TEST_CASE("sweep input validation") {
  const auto g = fixtures::chain2();
  const Eigen::VectorXd s = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(sweep_equilibrium(g, s, {1e-2, 1e-2}), InputError);
  CHECK_THROWS_AS(sweep_equilibrium(g, s, {1e-2, 0.0}), InputError);
  CHECK_THROWS_AS(sweep_equilibrium(g, s, {1e-4, 1e-2}), InputError);
}

TEST_CASE("default grid spans the plotted range") {
  const auto grid = default_epsilon_grid();
  REQUIRE(grid.size() == 17);
  CHECK(grid.front() == 1e-1);
  CHECK(grid.back() == 1e-5);
  for (std::size_t k = 1; k < grid.size(); ++k) CHECK(grid[k - 1] / grid[k] == doctest::Approx(std::pow(10.0, 0.25)));
}

TEST_CASE("selective schemes must reach every accessible component") {
  // Node 1 feeds the attacked node 0, so it stays accessible.
  DependenceGraph g({node(0.1), node(0.0)}, {{1, 0, 0.5}});
  const auto cond = condense(g);
  CHECK_NOTHROW(PerturbationScheme::selective(0.1, {1}).validate(g, cond));
  CHECK_THROWS_AS(PerturbationScheme::selective(0.1, {0}).validate(g, cond), InputError);
  CHECK_THROWS_AS(PerturbationScheme::selective(0.1, {7}).validate(g, cond), InputError);
  CHECK_THROWS_AS(PerturbationScheme::uniform(-1).validate(g, cond), InputError);

  const auto un = PerturbationScheme::unattacked(g, 0.2);
  CHECK(un.targets == std::vector<NodeId>{1});
  const Eigen::VectorXd lam = un.apply(g);
  CHECK(lam[0] == 0.1);
  CHECK(lam[1] == doctest::Approx(0.2));

  const Eigen::VectorXd d = sensitivity_deps(g, Eigen::VectorXd::Zero(2), un);
  CHECK(d[1] == doctest::Approx(0.1 / (0.3 * 0.3)));
  CHECK(d[0] > 0);  // propagated downstream
}

TEST_CASE("feasible set projection") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 2.0);
  const auto budget = FeasibleSet::budget_simplex(1.5);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd v(6);
    for (auto& x : v) x = nd(rng);
    const Eigen::VectorXd o = FeasibleSet::orthant().project(v);
    CHECK(o == v.cwiseMax(0.0));
    const Eigen::VectorXd p = budget.project(v);
    CHECK(budget.contains(p, 1e-12));
    // Variational inequality: (v - p)^T (z - p) <= 0 for feasible z.
    for (int k = 0; k < 20; ++k) {
      Eigen::VectorXd z(6);
      for (auto& x : z) x = std::abs(nd(rng));
      if (z.sum() > 1.5) z *= 1.5 / z.sum();
      CHECK((v - p).dot(z - p) <= 1e-10);
    }
    CHECK((budget.project(p) - p).norm() <= 1e-12);
  }
  Eigen::VectorXd v(3);
  v << 2.0, 1.0, -1.0;
  const Eigen::VectorXd p = budget.project(v);
  CHECK(p[0] == doctest::Approx(1.25));
  CHECK(p[1] == doctest::Approx(0.25));
  CHECK(p[2] == 0.0);
}

TEST_CASE("perturbation CSV leaves missing values empty") {
  std::ostringstream os;
  write_perturbation_csv(os, {{0.1, 1.0, 2.0, std::nullopt, 0.5}});
  CHECK(os.str() == "epsilon,F_lower,F_upper_recovered,F_rgm,max_p_deviation\n0.10000000000000001,1,2,,0.5\n");
}
