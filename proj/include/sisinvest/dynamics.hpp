#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "sisinvest/errors.hpp"
#include "sisinvest/graph.hpp"

namespace sisinvest {

// ---------------------------------------------------------------------------
// Mean-field SIS drift

/// p' = (1 - p) o q(s) o (lambda_eff + B p) - delta o p, where lambda_eff is
/// the (possibly perturbed) external attack vector.
Eigen::VectorXd dynamics_rhs(const DependenceGraph& g, const Eigen::VectorXd& p,
                             const Eigen::VectorXd& s, const Eigen::VectorXd& lambda_eff);
Eigen::VectorXd dynamics_rhs(const DependenceGraph& g, const Eigen::VectorXd& p,
                             const Eigen::VectorXd& s);

/// Equilibrium map g(p) = (1 - p) o (lambda_eff + B p) - d(s) o delta o p.
Eigen::VectorXd equilibrium_residual(const DependenceGraph& g, const Eigen::VectorXd& p,
                                     const Eigen::VectorXd& s, const Eigen::VectorXd& lambda_eff);

/// dg/dp = diag(1 - p) B - diag(d(s) o delta + lambda_eff + B p).
Eigen::SparseMatrix<double> equilibrium_jacobian(const DependenceGraph& g, const Eigen::VectorXd& p,
                                                 const Eigen::VectorXd& s,
                                                 const Eigen::VectorXd& lambda_eff);

// ---------------------------------------------------------------------------
// ODE oracle

struct OdeOptions {
  double step = 0.0;           ///< initial step; 0 picks 0.25 / (fastest rate)
  double min_step = 1e-10;
  bool record = false;         ///< keep the trajectory
  std::size_t record_every = 1;
};

struct OdeResult {
  Eigen::VectorXd terminal;
  double max_drift_tail = 0.0;  ///< max |p(t) - p(T)|_inf over t in [0.9 T, T]
  std::size_t steps = 0;
  std::size_t halvings = 0;
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;
};

/// Fixed-step RK4 on the SIS drift. A step whose result leaves
/// [-1e-12, 1 + 1e-12] is retried with half the step; states are clipped to [0, 1].
OdeResult integrate_ode(const DependenceGraph& g, const Eigen::VectorXd& p0, const Eigen::VectorXd& s,
                        const Eigen::VectorXd& lambda_eff, double horizon, const OdeOptions& opt = {});

/// Trajectory as CSV with columns t, p_0 .. p_{N-1}.
void write_trajectory_csv(std::ostream& os, const OdeResult& r);

// ---------------------------------------------------------------------------
// Nonnegative matrix utilities

/// Power iteration hit its iteration cap; carries the last iterate.
class PowerIterationError : public NumericError {
 public:
  PowerIterationError(const std::string& what, Eigen::VectorXd last, double estimate)
      : NumericError(what), last_iterate(std::move(last)), last_estimate(estimate) {}
  Eigen::VectorXd last_iterate;
  double last_estimate;
};

struct SpectralOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 100000;
  unsigned seed = 7;
};

/// Dominant eigenvalue of a nonnegative square matrix by shifted power
/// iteration with Collatz-Wielandt bracketing.
double spectral_radius(const Eigen::SparseMatrix<double>& m, const SpectralOptions& opt = {});
double spectral_radius(const Eigen::MatrixXd& m, const SpectralOptions& opt = {});

struct MMatrixCheck {
  bool nonsingular_m_matrix = false;
  std::string reason;
  Eigen::VectorXd witness;  ///< x > 0 with A x > 0 on success
};

/// Z-matrix check plus inverse-positivity witness: solves A x = 1 and
/// requires x > 0 and a recomputed A x > 0.
MMatrixCheck is_nonsingular_m_matrix(const Eigen::SparseMatrix<double>& a);
MMatrixCheck is_nonsingular_m_matrix(const Eigen::MatrixXd& a);

// ---------------------------------------------------------------------------
// Stable equilibrium

enum class Regime { disease_free, endemic, driven };
const char* to_string(Regime r);

/// Restriction of the equilibrium equations to one strongly connected component.
struct ComponentSystem {
  Eigen::SparseMatrix<double> b;   ///< internal infection matrix B_v
  Eigen::VectorXd lambda;          ///< effective attack rates (external + upstream)
  Eigen::VectorXd recovery;        ///< d(s) o delta = delta / q(s)
};

struct ComponentSolution {
  Eigen::VectorXd p;
  Regime regime = Regime::disease_free;
  double spectral_radius = 0.0;    ///< rho(D^-1 B_v); only computed when lambda == 0
  double residual = 0.0;
  std::size_t newton_iterations = 0;
  std::size_t fixed_point_iterations = 0;
};

struct ComponentSolverOptions {
  double tolerance = 1e-12;           ///< on ||g_v||_inf
  double threshold_tolerance = 1e-9;  ///< rho <= 1 + this counts as disease-free
  std::size_t warmup_iterations = 200;
  std::size_t newton_iterations = 100;
  std::size_t fallback_iterations = 1000000;
};

ComponentSolution solve_mscc_equilibrium(const ComponentSystem& sys,
                                         const Eigen::VectorXd* warm_start = nullptr,
                                         const ComponentSolverOptions& opt = {});

struct Equilibrium {
  Eigen::VectorXd p_bar;
  std::vector<Regime> regime;           ///< per MSCC
  std::vector<double> spectral_radius;  ///< per MSCC, 0 where not computed
  Eigen::VectorXd effective_lambda;     ///< per node
  double residual_inf = 0.0;
};

/// Level-wise stable equilibrium: components are solved in topological order
/// with upstream infection pressure folded into their attack rates.
Equilibrium stable_equilibrium(const DependenceGraph& g, const Condensation& cond, const Eigen::VectorXd& s,
                               const Eigen::VectorXd& lambda_eff, const Eigen::VectorXd* warm_start = nullptr,
                               const ComponentSolverOptions& opt = {});

/// Uniform perturbation lambda + eps 1.
Equilibrium stable_equilibrium(const DependenceGraph& g, const Eigen::VectorXd& s, double eps);

/// 1-norm condition estimate of -dg/dp at p (dense, intended for reports).
double jacobian_condition(const Eigen::SparseMatrix<double>& jac);

}  // namespace sisinvest
