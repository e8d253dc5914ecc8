#pragma once

#include <limits>
#include <optional>
#include <string>

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <nlohmann/json.hpp>

#include "sisinvest/problem.hpp"

namespace sisinvest {

/// Set D of admissible d = 1 / q(s): a box [1, d_max]^N or the image of the
/// budget simplex, sum_i s_i(d_i) <= budget.
struct DomainSpec {
  enum class Kind { box, budget };
  Kind kind = Kind::box;
  double d_max = std::numeric_limits<double>::infinity();
  double budget = 0.0;

  static DomainSpec box(double d_max = std::numeric_limits<double>::infinity()) { return {Kind::box, d_max, 0.0}; }
  static DomainSpec budget_image(double budget) { return {Kind::budget, std::numeric_limits<double>::infinity(), budget}; }
  static DomainSpec from(const FeasibleSet& s);
};

/// The relaxed program in the variables x = [d, p, y, t, u], where u holds the
/// entries of U on the sparsity pattern of B, one per edge.
struct RelaxProgram {
  std::size_t n = 0;
  std::vector<Edge> edges;       ///< u_e bounds b_e exp(y_dst - y_src)
  Eigen::VectorXd lambda;        ///< perturbed attack rates
  Eigen::VectorXd delta;
  Eigen::VectorXd c;
  Eigen::VectorXd weights;       ///< w(s) = weights^T s
  Eigen::VectorXd kappa;
  Eigen::VectorXd breach_exp;
  DomainSpec domain;
  double d_cap = 1e6;            ///< effective d_max when the box is unbounded
  Eigen::SparseMatrix<double> equality;  ///< rows: t + U1 - B p - delta o d = lambda

  std::size_t variable_count() const { return 4 * n + edges.size(); }
  std::size_t u_count() const { return edges.size(); }
  std::size_t equality_count() const { return n; }
  /// Scalar inequalities kept interior by the barrier.
  std::size_t inequality_count() const;
  double effective_d_max() const { return std::min(domain.d_max, d_cap); }

  /// w~(d) = w(s(d)) and its derivatives per node.
  double investment_of(std::size_t i, double d) const;
  double investment_cost(const Eigen::VectorXd& d) const;
  /// f~(d, p) = w~(d) + c^T p.
  double objective(const Eigen::VectorXd& d, const Eigen::VectorXd& p) const;
};

/// Throws InputError when w~ is not convex on D (breach exponent above 1 or a
/// negative investment weight): replace w~ by a convex lower bound first.
RelaxProgram build_relaxation(const InvestmentProblem& prob, const DomainSpec& domain);
RelaxProgram build_relaxation(const InvestmentProblem& prob);

struct BarrierSettings {
  double mu0 = 1.0;
  double mu_factor = 10.0;
  double mu_final = 1e-12;
  double grad_tol = 1e-8;
  std::size_t max_newton = 200;
};

struct RelaxSolution {
  Eigen::VectorXd d, p, y, t, u;
  Eigen::VectorXd sigma;        ///< equality multipliers
  Eigen::VectorXd mu_t;         ///< t >= lambda o e^y
  Eigen::VectorXd phi;          ///< per edge, u >= b e^{y_i - y_j}
  Eigen::VectorXd mu_p;         ///< p >= e^-y
  Eigen::VectorXd mu_p_upper;   ///< p <= 1
  Eigen::VectorXd mu_y;         ///< y >= 0
  double value = 0.0;           ///< f~(d+, p+)
  double mu = 0.0;              ///< final barrier parameter
  double duality_gap = 0.0;     ///< inequality_count * mu
  double equality_residual = 0.0;
  std::size_t stages = 0;
  std::size_t newton_iterations = 0;
  bool cap_active = false;      ///< the d cap of an unbounded box binds
};

/// Log-barrier path following with explicit equality rows in the Newton KKT
/// system. Throws NumericError with the barrier stage on a Newton stall.
RelaxSolution solve_barrier(const RelaxProgram& prog, const BarrierSettings& settings = {});

struct RecoveredPoint {
  Eigen::VectorXd d, p, s;
  double value = 0.0;               ///< f~(d', p')
  double ep_residual = 0.0;         ///< equilibrium equality, inf-norm
  double formula_discrepancy = 0.0; ///< ||d' - (d+ + delta^-1 B (p+ - p'))||_inf
  bool in_domain = true;            ///< d' in D (budget or d_max respected)
  std::size_t clipped_nodes = 0;    ///< nodes whose completion fell below d = 1
};

/// p' = e^{-y+}; d' completes the equilibrium equality exactly for p'. When
/// the t and U constraints are active this coincides with
/// d+ + diag(delta^-1) B (p+ - p'). Where the completion falls below 1, d' is
/// clipped to 1 and p' is replaced by the stable equilibrium at s(d').
RecoveredPoint recover_feasible(const RelaxProgram& prog, const RelaxSolution& sol);

enum class ExactnessVerdict { exact, not_exact, inconclusive };
const char* to_string(ExactnessVerdict v);

struct ExactnessCheck {
  ExactnessVerdict verdict = ExactnessVerdict::inconclusive;
  Eigen::VectorXd margins;  ///< B^T diag(delta^-1) grad w~(d_sup) - c; empty if inconclusive
  std::string reason;
};

/// Sufficient condition for the relaxation to be exact, evaluated at the
/// supremum of grad w~ over D.
ExactnessCheck check_exactness(const RelaxProgram& prog);

struct BoundsReport {
  double lower = 0.0;
  double upper_recovered = 0.0;
  std::optional<double> upper_rgm;
  bool exact = false;
  double gap_rel = 0.0;
  double relax_seconds = 0.0;
  double rgm_seconds = 0.0;

  double upper() const;
  /// Recomputes gap_rel from the bounds.
  void finalize();
};

nlohmann::json to_json(const BoundsReport& r);

}  // namespace sisinvest
