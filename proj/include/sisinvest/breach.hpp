#pragma once

#include <cmath>

#include <Eigen/Core>

#include "sisinvest/graph.hpp"

namespace sisinvest {

/// Breach probability q(s) = (1 + kappa s)^-b for investment s >= 0.
///
/// The relaxation works with d = 1 / q(s) >= 1 instead of s.
struct BreachModel {
  double kappa = 10.0;
  double exponent = 1.0;

  static BreachModel of(const NodeParams& p) { return {p.kappa, p.breach_exp}; }

  double q(double s) const { return std::pow(1.0 + kappa * s, -exponent); }
  /// d(s) = 1 / q(s)
  double inv_q(double s) const { return std::pow(1.0 + kappa * s, exponent); }
  /// d'(s)
  double inv_q_prime(double s) const {
    return exponent * kappa * std::pow(1.0 + kappa * s, exponent - 1.0);
  }
  /// Inverse of d(s): the investment that gives breach probability 1/d.
  double investment_for(double d) const { return (std::pow(d, 1.0 / exponent) - 1.0) / kappa; }
  double investment_for_prime(double d) const {
    return std::pow(d, 1.0 / exponent - 1.0) / (exponent * kappa);
  }
  double investment_for_second(double d) const {
    return (1.0 / exponent - 1.0) * std::pow(d, 1.0 / exponent - 2.0) / (exponent * kappa);
  }
};

/// Elementwise d(s) = 1 / q(s) for every node.
inline Eigen::VectorXd inverse_breach(const DependenceGraph& g, const Eigen::VectorXd& s) {
  Eigen::VectorXd d(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    d[i] = BreachModel::of(g.node(static_cast<NodeId>(i))).inv_q(s[i]);
  }
  return d;
}

}  // namespace sisinvest
