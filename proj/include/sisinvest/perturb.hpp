#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "sisinvest/dynamics.hpp"
#include "sisinvest/graph.hpp"

namespace sisinvest {

enum class PerturbationMode { uniform, selective };

/// How the external attack rates are perturbed: lambda_eps = lambda + eps * e,
/// where e is all ones (uniform) or the indicator of `targets` (selective).
struct PerturbationScheme {
  PerturbationMode mode = PerturbationMode::uniform;
  double epsilon = 0.0;
  std::vector<NodeId> targets;  ///< selective mode only

  static PerturbationScheme uniform(double eps) { return {PerturbationMode::uniform, eps, {}}; }
  static PerturbationScheme selective(double eps, std::vector<NodeId> targets) {
    return {PerturbationMode::selective, eps, std::move(targets)};
  }
  /// Perturb exactly the nodes without an external attack.
  static PerturbationScheme unattacked(const DependenceGraph& g, double eps);
  /// Perturb exactly the nodes of accessible (unexposed) MSCCs.
  static PerturbationScheme accessible(const Condensation& cond, double eps);

  PerturbationScheme with_epsilon(double eps) const;

  /// Unit perturbation direction e (d lambda_eps / d eps).
  Eigen::VectorXd direction(std::size_t n) const;
  Eigen::VectorXd apply(const DependenceGraph& g) const;

  /// Throws InputError unless eps >= 0 and, in selective mode, every
  /// accessible MSCC contains a target.
  void validate(const DependenceGraph& g, const Condensation& cond) const;
};

struct SweepPoint {
  double epsilon = 0.0;
  Eigen::VectorXd p_bar;
  double deviation = 0.0;  ///< ||p_eps - p_0||_inf
};

struct SweepResult {
  Eigen::VectorXd baseline;  ///< unperturbed stable equilibrium
  std::vector<SweepPoint> points;
};

/// Equilibria along a strictly decreasing list of positive epsilons, each
/// solve warm-started from the previous one.
SweepResult sweep_equilibrium(const DependenceGraph& g, const Eigen::VectorXd& s,
                              const std::vector<double>& epsilons,
                              const PerturbationScheme& scheme = PerturbationScheme::uniform(0.0),
                              bool warm_start = true);

/// d p_eps / d eps = [-dg/dp]^-1 ((1 - p) o e). Requires eps > 0.
Eigen::VectorXd sensitivity_deps(const DependenceGraph& g, const Eigen::VectorXd& s,
                                 const PerturbationScheme& scheme);

/// 17 log-spaced points from 1e-1 down to 1e-5.
std::vector<double> default_epsilon_grid();
/// `count` log-spaced points from hi down to lo.
std::vector<double> log_grid(double hi, double lo, std::size_t count);

/// Row of the perturbation CSV.
struct PerturbationRow {
  double epsilon = 0.0;
  std::optional<double> f_lower;
  std::optional<double> f_upper_recovered;
  std::optional<double> f_rgm;
  std::optional<double> max_p_deviation;
};

/// CSV columns: epsilon,F_lower,F_upper_recovered,F_rgm,max_p_deviation.
/// Missing values are written as empty fields.
void write_perturbation_csv(std::ostream& os, const std::vector<PerturbationRow>& rows);

}  // namespace sisinvest
