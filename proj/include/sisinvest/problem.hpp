#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "sisinvest/graph.hpp"
#include "sisinvest/perturb.hpp"

namespace sisinvest {

enum class FeasibleKind { nonneg_orthant, budget_simplex };

/// Convex feasible set for investments: R_+^N or {s >= 0 : 1^T s <= budget}.
struct FeasibleSet {
  FeasibleKind kind = FeasibleKind::nonneg_orthant;
  double budget = 0.0;

  static FeasibleSet orthant() { return {}; }
  static FeasibleSet budget_simplex(double budget) { return {FeasibleKind::budget_simplex, budget}; }

  bool contains(const Eigen::VectorXd& s, double tol = 1e-12) const;
  /// Euclidean projection.
  Eigen::VectorXd project(const Eigen::VectorXd& s) const;
};

/// Linear investment cost w(s) = a^T s with a >= 0 (a = 1 by default).
struct InvestmentCost {
  Eigen::VectorXd weights;  ///< empty means all ones

  Eigen::VectorXd weights_for(std::size_t n) const;
  double value(const Eigen::VectorXd& s) const;
};

/// Graph, perturbation, cost functional and feasible set for the perturbed
/// minimization of F_eps(s) = w(s) + c^T p_eps(s).
class InvestmentProblem {
 public:
  InvestmentProblem(DependenceGraph graph, PerturbationScheme perturbation, InvestmentCost cost = {},
                    FeasibleSet feasible = {});

  const DependenceGraph& graph() const { return graph_; }
  const Condensation& condensation() const { return cond_; }
  const PerturbationScheme& perturbation() const { return perturbation_; }
  const InvestmentCost& cost() const { return cost_; }
  const FeasibleSet& feasible() const { return feasible_; }

  std::size_t size() const { return graph_.size(); }
  double epsilon() const { return perturbation_.epsilon; }
  /// Perturbed attack vector lambda_eps.
  const Eigen::VectorXd& attack() const { return attack_; }
  /// Infection cost rates c.
  const Eigen::VectorXd& infection_cost() const { return c_; }
  Eigen::VectorXd investment_weights() const { return cost_.weights_for(size()); }

  InvestmentProblem with_epsilon(double eps) const;

 private:
  DependenceGraph graph_;
  Condensation cond_;
  PerturbationScheme perturbation_;
  InvestmentCost cost_;
  FeasibleSet feasible_;
  Eigen::VectorXd attack_;
  Eigen::VectorXd c_;
};

}  // namespace sisinvest
