#include "sisinvest/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include <Eigen/LU>
#include <Eigen/SparseLU>

#include "sisinvest/breach.hpp"
#include "sisinvest/errors.hpp"

namespace sisinvest {

namespace {

void check_dims(const DependenceGraph& g, const Eigen::VectorXd& a, const char* what) {
  if (static_cast<std::size_t>(a.size()) != g.size()) {
    std::ostringstream os;
    os << what << " has dimension " << a.size() << ", graph has " << g.size() << " nodes";
    throw InputError(os.str());
  }
}

Eigen::VectorXd breach_vector(const DependenceGraph& g, const Eigen::VectorXd& s) {
  Eigen::VectorXd q(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) q[i] = BreachModel::of(g.node(static_cast<NodeId>(i))).q(s[i]);
  return q;
}

}  // namespace

Eigen::VectorXd dynamics_rhs(const DependenceGraph& g, const Eigen::VectorXd& p, const Eigen::VectorXd& s,
                             const Eigen::VectorXd& lambda_eff) {
  check_dims(g, p, "state");
  check_dims(g, s, "investment");
  check_dims(g, lambda_eff, "attack vector");
  const Eigen::VectorXd q = breach_vector(g, s);
  const Eigen::VectorXd pressure = lambda_eff + g.infection_matrix() * p;
  return ((1.0 - p.array()) * q.array() * pressure.array() - g.delta().array() * p.array()).matrix();
}

Eigen::VectorXd dynamics_rhs(const DependenceGraph& g, const Eigen::VectorXd& p, const Eigen::VectorXd& s) {
  return dynamics_rhs(g, p, s, g.lambda());
}

Eigen::VectorXd equilibrium_residual(const DependenceGraph& g, const Eigen::VectorXd& p,
                                     const Eigen::VectorXd& s, const Eigen::VectorXd& lambda_eff) {
  check_dims(g, p, "state");
  check_dims(g, s, "investment");
  check_dims(g, lambda_eff, "attack vector");
  const Eigen::VectorXd recovery = (inverse_breach(g, s).array() * g.delta().array()).matrix();
  const Eigen::VectorXd pressure = lambda_eff + g.infection_matrix() * p;
  return ((1.0 - p.array()) * pressure.array() - recovery.array() * p.array()).matrix();
}

Eigen::SparseMatrix<double> equilibrium_jacobian(const DependenceGraph& g, const Eigen::VectorXd& p,
                                                 const Eigen::VectorXd& s,
                                                 const Eigen::VectorXd& lambda_eff) {
  check_dims(g, p, "state");
  const auto& b = g.infection_matrix();
  const Eigen::VectorXd recovery = (inverse_breach(g, s).array() * g.delta().array()).matrix();
  const Eigen::VectorXd diag = recovery + lambda_eff + b * p;
  Eigen::SparseMatrix<double> jac = (1.0 - p.array()).matrix().asDiagonal() * b;
  for (Eigen::Index i = 0; i < jac.rows(); ++i) jac.coeffRef(i, i) -= diag[i];
  jac.makeCompressed();
  return jac;
}

// ---------------------------------------------------------------------------

OdeResult integrate_ode(const DependenceGraph& g, const Eigen::VectorXd& p0, const Eigen::VectorXd& s,
                        const Eigen::VectorXd& lambda_eff, double horizon, const OdeOptions& opt) {
  check_dims(g, p0, "initial state");
  if (!(horizon > 0)) throw InputError("integrate_ode: horizon must be positive");
  if ((p0.array() < 0).any() || (p0.array() > 1).any()) throw InputError("integrate_ode: p0 outside [0,1]");

  const Eigen::VectorXd q = breach_vector(g, s);
  const Eigen::VectorXd delta = g.delta();
  const auto& b = g.infection_matrix();
  auto rhs = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
    return ((1.0 - p.array()) * q.array() * (lambda_eff + b * p).array() - delta.array() * p.array()).matrix();
  };

  double step = opt.step;
  if (step <= 0) {
    const Eigen::VectorXd in_rate = b * Eigen::VectorXd::Ones(b.cols());
    const double fastest =
        (delta.array() + q.array() * (lambda_eff.array() + in_rate.array())).maxCoeff();
    step = std::min(1.0, 0.25 / std::max(fastest, 1e-12));
  }

  OdeResult r;
  Eigen::VectorXd p = p0;
  double t = 0;
  const double tail_start = 0.9 * horizon;
  std::vector<Eigen::VectorXd> tail;
  if (opt.record) {
    r.times.push_back(t);
    r.states.push_back(p);
  }
  constexpr double kSlack = 1e-12;
  while (t < horizon) {
    const double h = std::min(step, horizon - t);
    const Eigen::VectorXd k1 = rhs(p);
    const Eigen::VectorXd k2 = rhs(p + 0.5 * h * k1);
    const Eigen::VectorXd k3 = rhs(p + 0.5 * h * k2);
    const Eigen::VectorXd k4 = rhs(p + h * k3);
    Eigen::VectorXd next = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if ((next.array() < -kSlack).any() || (next.array() > 1.0 + kSlack).any() || !next.allFinite()) {
      step *= 0.5;
      ++r.halvings;
      if (step < opt.min_step) {
        std::ostringstream os;
        os << "integrate_ode: step underflow at t=" << t;
        throw NumericError(os.str());
      }
      continue;
    }
    p = next.cwiseMax(0.0).cwiseMin(1.0);
    t = (h == horizon - t) ? horizon : t + h;
    ++r.steps;
    if (t >= tail_start) tail.push_back(p);
    if (opt.record && (r.steps % std::max<std::size_t>(opt.record_every, 1) == 0 || t == horizon)) {
      r.times.push_back(t);
      r.states.push_back(p);
    }
  }
  r.terminal = p;
  for (const auto& x : tail) r.max_drift_tail = std::max(r.max_drift_tail, (x - p).lpNorm<Eigen::Infinity>());
  return r;
}

void write_trajectory_csv(std::ostream& os, const OdeResult& r) {
  os << "t";
  const Eigen::Index n = r.states.empty() ? r.terminal.size() : r.states.front().size();
  for (Eigen::Index i = 0; i < n; ++i) os << ",p_" << i;
  os << '\n';
  os.precision(17);
  for (std::size_t k = 0; k < r.states.size(); ++k) {
    os << r.times[k];
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << r.states[k][i];
    os << '\n';
  }
}

// ---------------------------------------------------------------------------

double spectral_radius(const Eigen::SparseMatrix<double>& m, const SpectralOptions& opt) {
  if (m.rows() != m.cols()) throw InputError("spectral_radius: matrix is not square");
  const Eigen::Index n = m.rows();
  if (n == 0) return 0.0;
  double max_row = 0;
  {
    Eigen::VectorXd rows = Eigen::VectorXd::Zero(n);
    for (Eigen::Index k = 0; k < m.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(m, k); it; ++it) {
        if (it.value() < 0) throw InputError("spectral_radius: matrix has a negative entry");
        rows[it.row()] += it.value();
      }
    }
    max_row = rows.maxCoeff();
  }
  if (max_row == 0) return 0.0;

  // The shift makes an irreducible matrix primitive, which removes the
  // oscillation plain power iteration shows on periodic (e.g. bipartite) graphs.
  const double shift = 0.5 * max_row;
  std::mt19937 rng(opt.seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i) x[i] = u(rng);
  x /= x.sum();

  double prev = std::numeric_limits<double>::quiet_NaN();
  std::size_t stable = 0;
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    Eigen::VectorXd y = m * x + shift * x;
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double ratio = y[i] / x[i];
      lo = std::min(lo, ratio);
      hi = std::max(hi, ratio);
    }
    if (hi - lo <= opt.tolerance * hi) return 0.5 * (lo + hi) - shift;
    const double est = y.sum();  // x is normalized in the 1-norm
    if (std::abs(est - prev) <= opt.tolerance * est) {
      if (++stable >= 20) return est - shift;
    } else {
      stable = 0;
    }
    prev = est;
    x = y / est;
    x = x.cwiseMax(std::numeric_limits<double>::min());
  }
  throw PowerIterationError("spectral_radius: power iteration did not converge", x, prev - shift);
}

double spectral_radius(const Eigen::MatrixXd& m, const SpectralOptions& opt) {
  return spectral_radius(Eigen::SparseMatrix<double>(m.sparseView(0.0, 0.0)), opt);
}

MMatrixCheck is_nonsingular_m_matrix(const Eigen::SparseMatrix<double>& a) {
  MMatrixCheck out;
  if (a.rows() != a.cols()) {
    out.reason = "matrix is not square";
    return out;
  }
  constexpr double kTol = 1e-12;
  for (Eigen::Index k = 0; k < a.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(a, k); it; ++it) {
      if (it.row() == it.col() && it.value() < -kTol) {
        out.reason = "negative diagonal entry at " + std::to_string(it.row());
        return out;
      }
      if (it.row() != it.col() && it.value() > kTol) {
        out.reason = "positive off-diagonal entry at (" + std::to_string(it.row()) + "," +
                     std::to_string(it.col()) + ")";
        return out;
      }
    }
  }
  const Eigen::Index n = a.rows();
  if (n == 0) {
    out.nonsingular_m_matrix = true;
    return out;
  }
  Eigen::SparseMatrix<double> ac = a;
  ac.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(ac);
  if (lu.info() != Eigen::Success) {
    out.reason = "matrix is singular";
    return out;
  }
  const Eigen::VectorXd x = lu.solve(Eigen::VectorXd::Ones(n));
  if (!x.allFinite() || (x.array() <= 0).any()) {
    out.reason = "solution of A x = 1 is not strictly positive";
    return out;
  }
  const Eigen::VectorXd ax = ac * x;
  if ((ax.array() <= 0).any()) {
    out.reason = "recomputed A x is not strictly positive";
    return out;
  }
  out.nonsingular_m_matrix = true;
  out.witness = x;
  return out;
}

MMatrixCheck is_nonsingular_m_matrix(const Eigen::MatrixXd& a) {
  return is_nonsingular_m_matrix(Eigen::SparseMatrix<double>(a.sparseView(0.0, 0.0)));
}

// ---------------------------------------------------------------------------

const char* to_string(Regime r) {
  switch (r) {
    case Regime::disease_free: return "disease_free";
    case Regime::endemic: return "endemic";
    case Regime::driven: return "driven";
  }
  return "?";
}

namespace {

Eigen::VectorXd component_residual(const ComponentSystem& sys, const Eigen::VectorXd& p) {
  const Eigen::VectorXd pressure = sys.lambda + sys.b * p;
  return ((1.0 - p.array()) * pressure.array() - sys.recovery.array() * p.array()).matrix();
}

Eigen::VectorXd fixed_point_map(const ComponentSystem& sys, const Eigen::VectorXd& p) {
  const Eigen::ArrayXd pressure = (sys.lambda + sys.b * p).array();
  return (pressure / (pressure + sys.recovery.array())).matrix();
}

// Factorization of the component Jacobian. Hubs in scale-free components
// cause near-total fill, so small components use dense LU.
class ComponentJacobian {
 public:
  explicit ComponentJacobian(const ComponentSystem& sys) : sys_(sys), dense_(sys.b.rows() <= kDenseLimit) {
    const Eigen::Index n = sys.b.rows();
    if (dense_) return;
    // Pattern is B plus an explicit diagonal; only values change.
    std::vector<Eigen::Triplet<double>> trip;
    for (Eigen::Index k = 0; k < sys.b.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator e(sys.b, k); e; ++e) trip.emplace_back(e.row(), e.col(), e.value());
    }
    for (Eigen::Index i = 0; i < n; ++i) trip.emplace_back(i, i, 0.0);
    pattern_.resize(n, n);
    pattern_.setFromTriplets(trip.begin(), trip.end());
    pattern_.makeCompressed();
    jac_ = pattern_;
    sparse_.analyzePattern(jac_);
  }

  bool factor(const Eigen::VectorXd& p) {
    const Eigen::Index n = p.size();
    const Eigen::VectorXd pressure = sys_.lambda + sys_.b * p;
    if (dense_) {
      Eigen::MatrixXd jac = (1.0 - p.array()).matrix().asDiagonal() * Eigen::MatrixXd(sys_.b);
      jac.diagonal() -= pressure + sys_.recovery;
      dense_lu_.compute(jac);
      return true;
    }
    for (Eigen::Index k = 0; k < n; ++k) {
      Eigen::SparseMatrix<double>::InnerIterator src(pattern_, k);
      for (Eigen::SparseMatrix<double>::InnerIterator e(jac_, k); e; ++e, ++src) {
        e.valueRef() = (1.0 - p[e.row()]) * src.value();
        if (e.row() == k) e.valueRef() -= pressure[k] + sys_.recovery[k];
      }
    }
    sparse_.factorize(jac_);
    return sparse_.info() == Eigen::Success;
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) {
    return dense_ ? Eigen::VectorXd(dense_lu_.solve(rhs)) : Eigen::VectorXd(sparse_.solve(rhs));
  }

 private:
  static constexpr Eigen::Index kDenseLimit = 300;
  const ComponentSystem& sys_;
  bool dense_;
  Eigen::SparseMatrix<double> pattern_, jac_;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> sparse_;
  Eigen::PartialPivLU<Eigen::MatrixXd> dense_lu_;
};

// Damped Newton on g_v with backtracking on ||g_v||_inf. A factorization is
// reused while full steps keep cutting the residual by 4x. Returns false when
// it stalls or leaves [0, 1].
bool newton_component(const ComponentSystem& sys, Eigen::VectorXd& p, const ComponentSolverOptions& opt,
                      std::size_t& iterations) {
  ComponentJacobian jac(sys);
  Eigen::VectorXd g = component_residual(sys, p);
  double norm = g.lpNorm<Eigen::Infinity>();
  bool reuse = false;
  for (std::size_t it = 0; it < opt.newton_iterations; ++it) {
    if (norm <= opt.tolerance) return true;
    ++iterations;
    const bool stale = reuse;
    if (!reuse && !jac.factor(p)) return false;
    const Eigen::VectorXd step = jac.solve(-g);
    if (!step.allFinite()) return false;

    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
      Eigen::VectorXd trial = p + alpha * step;
      if ((trial.array() < -1e-14).any() || (trial.array() > 1.0 + 1e-14).any()) continue;
      trial = trial.cwiseMax(0.0).cwiseMin(1.0);
      const Eigen::VectorXd gt = component_residual(sys, trial);
      const double nt = gt.lpNorm<Eigen::Infinity>();
      if (nt <= (1.0 - 1e-4 * alpha) * norm || nt <= opt.tolerance) {
        reuse = alpha == 1.0 && nt <= 0.25 * norm;
        p = trial;
        g = gt;
        norm = nt;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!stale) return false;
      reuse = false;
    }
  }
  return norm <= opt.tolerance;
}

}  // namespace

ComponentSolution solve_mscc_equilibrium(const ComponentSystem& sys, const Eigen::VectorXd* warm_start,
                                         const ComponentSolverOptions& opt) {
  const Eigen::Index n = sys.recovery.size();
  if (sys.lambda.size() != n || sys.b.rows() != n || sys.b.cols() != n) {
    throw InputError("solve_mscc_equilibrium: inconsistent component dimensions");
  }
  if ((sys.lambda.array() < 0).any()) throw InputError("solve_mscc_equilibrium: negative attack rate");

  ComponentSolution sol;
  const bool driven = (sys.lambda.array() > 0).any();
  if (!driven) {
    const Eigen::SparseMatrix<double> scaled = sys.recovery.cwiseInverse().asDiagonal() * sys.b;
    sol.spectral_radius = spectral_radius(scaled);
    if (sol.spectral_radius <= 1.0 + opt.threshold_tolerance) {
      sol.p = Eigen::VectorXd::Zero(n);
      sol.regime = Regime::disease_free;
      return sol;
    }
    sol.regime = Regime::endemic;
  } else {
    sol.regime = Regime::driven;
  }

  // A singleton has no internal edges, so the root is explicit.
  if (n == 1) {
    sol.p = Eigen::VectorXd::Constant(1, sys.lambda[0] / (sys.lambda[0] + sys.recovery[0]));
    sol.residual = component_residual(sys, sol.p).lpNorm<Eigen::Infinity>();
    return sol;
  }

  auto acceptable = [&](const Eigen::VectorXd& p) {
    return sol.regime == Regime::driven || (p.array() > 0).all();
  };

  if (warm_start != nullptr && warm_start->size() == n) {
    Eigen::VectorXd p = warm_start->cwiseMax(0.0).cwiseMin(1.0);
    if (newton_component(sys, p, opt, sol.newton_iterations) && acceptable(p)) {
      sol.p = p;
      sol.residual = component_residual(sys, p).lpNorm<Eigen::Infinity>();
      return sol;
    }
  }

  // Iterating the fixed-point map from p = 1 decreases monotonically to the
  // largest equilibrium, which is the stable one.
  Eigen::VectorXd p = Eigen::VectorXd::Ones(n);
  for (std::size_t it = 0; it < opt.warmup_iterations; ++it) {
    const Eigen::VectorXd next = fixed_point_map(sys, p);
    ++sol.fixed_point_iterations;
    const double change = (next - p).lpNorm<Eigen::Infinity>();
    p = next;
    if (change < 1e-4) break;
  }
  Eigen::VectorXd newton_p = p;
  if (newton_component(sys, newton_p, opt, sol.newton_iterations) && acceptable(newton_p)) {
    sol.p = newton_p;
    sol.residual = component_residual(sys, newton_p).lpNorm<Eigen::Infinity>();
    return sol;
  }

  for (std::size_t it = 0; it < opt.fallback_iterations; ++it) {
    p = fixed_point_map(sys, p);
    ++sol.fixed_point_iterations;
    if (component_residual(sys, p).lpNorm<Eigen::Infinity>() <= opt.tolerance) {
      if (!acceptable(p)) break;
      sol.p = p;
      sol.residual = component_residual(sys, p).lpNorm<Eigen::Infinity>();
      return sol;
    }
  }
  throw NumericError("component equilibrium: Newton and fixed-point iteration both failed");
}

Equilibrium stable_equilibrium(const DependenceGraph& g, const Condensation& cond, const Eigen::VectorXd& s,
                               const Eigen::VectorXd& lambda_eff, const Eigen::VectorXd* warm_start,
                               const ComponentSolverOptions& opt) {
  check_dims(g, s, "investment");
  check_dims(g, lambda_eff, "attack vector");
  if ((s.array() < 0).any()) throw InputError("stable_equilibrium: negative investment");
  if (warm_start != nullptr) check_dims(g, *warm_start, "warm start");
  const std::size_t n = g.size();
  const Eigen::VectorXd recovery = (inverse_breach(g, s).array() * g.delta().array()).matrix();

  Equilibrium eq;
  eq.p_bar = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  eq.effective_lambda = lambda_eff;
  eq.regime.assign(cond.size(), Regime::disease_free);
  eq.spectral_radius.assign(cond.size(), 0.0);

  std::vector<Eigen::Index> local(n, -1);
  for (const std::size_t v : cond.order) {
    const auto& members = cond.msccs[v];
    const auto nv = static_cast<Eigen::Index>(members.size());
    for (Eigen::Index k = 0; k < nv; ++k) local[members[static_cast<std::size_t>(k)]] = k;

    ComponentSystem sys;
    sys.lambda.resize(nv);
    sys.recovery.resize(nv);
    std::vector<Eigen::Triplet<double>> trip;
    for (Eigen::Index k = 0; k < nv; ++k) {
      const NodeId i = members[static_cast<std::size_t>(k)];
      double lam = lambda_eff[static_cast<Eigen::Index>(i)];
      for (const std::size_t e : g.in_edges(i)) {
        const Edge& edge = g.edges()[e];
        if (cond.component_of[edge.src] == v) {
          trip.emplace_back(k, local[edge.src], edge.rate);
        } else {
          lam += edge.rate * eq.p_bar[static_cast<Eigen::Index>(edge.src)];
        }
      }
      sys.lambda[k] = lam;
      sys.recovery[k] = recovery[static_cast<Eigen::Index>(i)];
      eq.effective_lambda[static_cast<Eigen::Index>(i)] = lam;
    }
    sys.b.resize(nv, nv);
    sys.b.setFromTriplets(trip.begin(), trip.end());

    Eigen::VectorXd warm;
    if (warm_start != nullptr) {
      warm.resize(nv);
      for (Eigen::Index k = 0; k < nv; ++k) warm[k] = (*warm_start)[static_cast<Eigen::Index>(members[static_cast<std::size_t>(k)])];
    }
    ComponentSolution sol;
    try {
      sol = solve_mscc_equilibrium(sys, warm_start != nullptr ? &warm : nullptr, opt);
    } catch (const NumericError& ex) {
      throw NumericError("MSCC " + std::to_string(v) + ": " + ex.what());
    }
    for (Eigen::Index k = 0; k < nv; ++k) eq.p_bar[static_cast<Eigen::Index>(members[static_cast<std::size_t>(k)])] = sol.p[k];
    eq.regime[v] = sol.regime;
    eq.spectral_radius[v] = sol.spectral_radius;
  }

  eq.residual_inf = equilibrium_residual(g, eq.p_bar, s, lambda_eff).lpNorm<Eigen::Infinity>();
  if (!(eq.residual_inf <= 1e-10)) {
    std::ostringstream os;
    os << "stable_equilibrium: global residual " << eq.residual_inf << " exceeds 1e-10";
    throw NumericError(os.str());
  }
  return eq;
}

Equilibrium stable_equilibrium(const DependenceGraph& g, const Eigen::VectorXd& s, double eps) {
  if (!(eps >= 0)) throw InputError("stable_equilibrium: epsilon must be >= 0");
  const Eigen::VectorXd lam = g.lambda().array() + eps;
  return stable_equilibrium(g, condense(g), s, lam);
}

double jacobian_condition(const Eigen::SparseMatrix<double>& jac) {
  const Eigen::MatrixXd dense(jac);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(dense);
  const Eigen::MatrixXd inv = lu.inverse();
  auto norm1 = [](const Eigen::MatrixXd& m) { return m.cwiseAbs().colwise().sum().maxCoeff(); };
  return norm1(dense) * norm1(inv);
}

}  // namespace sisinvest
