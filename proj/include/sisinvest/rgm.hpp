#pragma once

#include <iosfwd>
#include <vector>

#include <Eigen/Core>

#include "sisinvest/dynamics.hpp"
#include "sisinvest/problem.hpp"

namespace sisinvest {

/// Value of F_eps at s together with the equilibrium it was computed from.
struct Evaluation {
  double value = 0.0;
  Eigen::VectorXd p_bar;
};

/// F_eps(s) = w(s) + c^T p_eps(s). Also defined for eps = 0.
Evaluation evaluate(const InvestmentProblem& prob, const Eigen::VectorXd& s,
                    const Eigen::VectorXd* warm_start = nullptr);
double objective(const InvestmentProblem& prob, const Eigen::VectorXd& s);

/// Adjoint gradient at s, given the stable equilibrium p_bar there.
/// Requires eps > 0 so that -dg/dp is a nonsingular M-matrix.
Eigen::VectorXd gradient_at(const InvestmentProblem& prob, const Eigen::VectorXd& s, const Eigen::VectorXd& p_bar);
Eigen::VectorXd gradient(const InvestmentProblem& prob, const Eigen::VectorXd& s);

struct RgmSettings {
  double gamma0 = 1.0;
  double shrink = 0.85;
  double armijo_c = 1e-4;
  double grad_tol = 1e-6;  ///< on ||s - P(s - grad F)||_inf
  std::size_t max_iters = 10000;
  double min_step = 1e-12;

  void validate() const;
};

struct RgmIterate {
  std::size_t iter = 0;
  double value = 0.0;
  double step = 0.0;  ///< accepted step size; 0 for the initial point
  double grad_norm = 0.0;
};

enum class RgmStatus { converged, max_iters, stalled };
const char* to_string(RgmStatus s);

struct RgmResult {
  Eigen::VectorXd s;
  Eigen::VectorXd p_bar;
  double value = 0.0;
  double grad_norm = 0.0;
  RgmStatus status = RgmStatus::max_iters;
  std::vector<RgmIterate> log;
};

/// Projected gradient descent with Armijo backtracking from s0 (zero if empty).
RgmResult solve_rgm(const InvestmentProblem& prob, const Eigen::VectorXd& s0 = {}, const RgmSettings& settings = {});

/// CSV columns: iter,F,step,grad_norm.
void write_iterate_log_csv(std::ostream& os, const std::vector<RgmIterate>& log);

}  // namespace sisinvest
