#include "sisinvest/problem.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "sisinvest/errors.hpp"

namespace sisinvest {

bool FeasibleSet::contains(const Eigen::VectorXd& s, double tol) const {
  if ((s.array() < -tol).any()) return false;
  if (kind == FeasibleKind::budget_simplex) return s.sum() <= budget + tol;
  return true;
}

Eigen::VectorXd FeasibleSet::project(const Eigen::VectorXd& s) const {
  Eigen::VectorXd x = s.cwiseMax(0.0);
  if (kind == FeasibleKind::nonneg_orthant || x.sum() <= budget) return x;

  // Projection onto {x >= 0, 1^T x = budget}: find the threshold tau with
  // sum(max(s - tau, 0)) = budget by sorting.
  std::vector<double> v(s.data(), s.data() + s.size());
  std::sort(v.begin(), v.end(), std::greater<>());
  double cumulative = 0.0, tau = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    cumulative += v[k];
    const double t = (cumulative - budget) / static_cast<double>(k + 1);
    if (k + 1 == v.size() || v[k + 1] <= t) {
      tau = t;
      break;
    }
  }
  return (s.array() - tau).cwiseMax(0.0).matrix();
}

Eigen::VectorXd InvestmentCost::weights_for(std::size_t n) const {
  if (weights.size() == 0) return Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  if (static_cast<std::size_t>(weights.size()) != n) throw InputError("investment weights have the wrong dimension");
  return weights;
}

double InvestmentCost::value(const Eigen::VectorXd& s) const {
  return weights.size() == 0 ? s.sum() : weights.dot(s);
}

InvestmentProblem::InvestmentProblem(DependenceGraph graph, PerturbationScheme perturbation, InvestmentCost cost,
                                     FeasibleSet feasible)
    : graph_(std::move(graph)),
      cond_(condense(graph_)),
      perturbation_(std::move(perturbation)),
      cost_(std::move(cost)),
      feasible_(feasible) {
  perturbation_.validate(graph_, cond_);
  if (feasible_.kind == FeasibleKind::budget_simplex && !(feasible_.budget > 0)) {
    throw InputError("budget must be positive");
  }
  const Eigen::VectorXd w = cost_.weights_for(graph_.size());
  if (!w.allFinite()) throw InputError("investment weights must be finite");
  attack_ = perturbation_.apply(graph_);
  c_ = graph_.cost();
}

InvestmentProblem InvestmentProblem::with_epsilon(double eps) const {
  InvestmentProblem out = *this;
  out.perturbation_.epsilon = eps;
  out.perturbation_.validate(out.graph_, out.cond_);
  out.attack_ = out.perturbation_.apply(out.graph_);
  return out;
}

}  // namespace sisinvest
