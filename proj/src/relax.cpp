#include "sisinvest/relax.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "sisinvest/breach.hpp"
#include "sisinvest/dynamics.hpp"
#include "sisinvest/errors.hpp"

namespace sisinvest {

namespace {

using Index = Eigen::Index;
using Triplet = Eigen::Triplet<double>;
constexpr double kInf = std::numeric_limits<double>::infinity();

/// s(d) = (d^{1/b} - 1) / kappa and its first two derivatives.
struct InvestmentCurve {
  double kappa, b;
  double value(double d) const { return (std::pow(d, 1.0 / b) - 1.0) / kappa; }
  double first(double d) const { return std::pow(d, 1.0 / b - 1.0) / (b * kappa); }
  double second(double d) const { return (1.0 / b - 1.0) * std::pow(d, 1.0 / b - 2.0) / (b * kappa); }
};

/// Index helpers for x = [d, p, y, t, u].
struct Layout {
  Index n, e;
  Index d(Index i) const { return i; }
  Index p(Index i) const { return n + i; }
  Index y(Index i) const { return 2 * n + i; }
  Index t(Index i) const { return 3 * n + i; }
  Index u(Index k) const { return 4 * n + k; }
  Index size() const { return 4 * n + e; }
};

/// Barrier objective f~(x) + mu * sum(-log slack) with derivatives.
class BarrierFunction {
 public:
  explicit BarrierFunction(const RelaxProgram& prog)
      : prog_(prog), lay_{static_cast<Index>(prog.n), static_cast<Index>(prog.edges.size())} {
    for (std::size_t i = 0; i < prog.n; ++i) curves_.push_back({prog.kappa[static_cast<Index>(i)], prog.breach_exp[static_cast<Index>(i)]});
    d_max_ = prog.effective_d_max();
    budget_ = prog.domain.kind == DomainSpec::Kind::budget;
  }

  const Layout& layout() const { return lay_; }
  bool budget() const { return budget_; }

  double value(const Eigen::VectorXd& x, double mu) const {
    double f = 0.0, bar = 0.0, spent = 0.0;
    for (Index i = 0; i < lay_.n; ++i) {
      const double d = x[lay_.d(i)], p = x[lay_.p(i)], y = x[lay_.y(i)], t = x[lay_.t(i)];
      const double slacks[] = {p - std::exp(-y), 1.0 - p, t - prog_.lambda[i] * std::exp(y), y, d - 1.0,
                               budget_ ? 1.0 : d_max_ - d};
      for (double a : slacks) {
        if (!(a > 0)) return kInf;
        bar -= std::log(a);
      }
      const double s = curves_[static_cast<std::size_t>(i)].value(d);
      spent += s;
      f += prog_.weights[i] * s + prog_.c[i] * p;
    }
    for (Index k = 0; k < lay_.e; ++k) {
      const auto& e = prog_.edges[static_cast<std::size_t>(k)];
      const double a = x[lay_.u(k)] - e.rate * std::exp(x[lay_.y(static_cast<Index>(e.dst))] - x[lay_.y(static_cast<Index>(e.src))]);
      if (!(a > 0)) return kInf;
      bar -= std::log(a);
    }
    if (budget_) {
      const double h = prog_.domain.budget - spent;
      if (!(h > 0)) return kInf;
      bar -= std::log(h);
    }
    return f + mu * bar;
  }

  /// Gradient and Hessian triplets. The rank-one part of the budget term is
  /// returned separately as border * border^T * mu / h^2.
  void derivatives(const Eigen::VectorXd& x, double mu, Eigen::VectorXd& grad, std::vector<Triplet>& hess,
                   Eigen::VectorXd& border, double& budget_slack) const {
    grad.setZero(lay_.size());
    hess.clear();
    auto term = [&](int k, const Index* idx, const double* g, const double* h, double a) {
      for (int r = 0; r < k; ++r) {
        grad[idx[r]] -= mu * g[r] / a;
        for (int s = 0; s < k; ++s) hess.emplace_back(idx[r], idx[s], mu * (g[r] * g[s] / (a * a) - h[r * k + s] / a));
      }
    };
    double spent = 0.0;
    if (budget_) border.setZero(lay_.n);
    for (Index i = 0; i < lay_.n; ++i) {
      const double d = x[lay_.d(i)], p = x[lay_.p(i)], y = x[lay_.y(i)], t = x[lay_.t(i)];
      const auto& cv = curves_[static_cast<std::size_t>(i)];
      grad[lay_.d(i)] += prog_.weights[i] * cv.first(d);
      hess.emplace_back(lay_.d(i), lay_.d(i), prog_.weights[i] * cv.second(d));
      grad[lay_.p(i)] += prog_.c[i];

      const double ey = std::exp(-y);
      {  // p - e^-y
        const Index idx[] = {lay_.p(i), lay_.y(i)};
        const double g[] = {1.0, ey}, h[] = {0.0, 0.0, 0.0, -ey};
        term(2, idx, g, h, p - ey);
      }
      {  // 1 - p
        const Index idx[] = {lay_.p(i)};
        const double g[] = {-1.0}, h[] = {0.0};
        term(1, idx, g, h, 1.0 - p);
      }
      {  // t - lambda e^y
        const double le = prog_.lambda[i] * std::exp(y);
        const Index idx[] = {lay_.t(i), lay_.y(i)};
        const double g[] = {1.0, -le}, h[] = {0.0, 0.0, 0.0, -le};
        term(2, idx, g, h, t - le);
      }
      {  // y
        const Index idx[] = {lay_.y(i)};
        const double g[] = {1.0}, h[] = {0.0};
        term(1, idx, g, h, y);
      }
      {  // d - 1
        const Index idx[] = {lay_.d(i)};
        const double g[] = {1.0}, h[] = {0.0};
        term(1, idx, g, h, d - 1.0);
      }
      if (budget_) {
        spent += cv.value(d);
        border[i] = cv.first(d);
      } else {
        const Index idx[] = {lay_.d(i)};
        const double g[] = {-1.0}, h[] = {0.0};
        term(1, idx, g, h, d_max_ - d);
      }
    }
    for (Index k = 0; k < lay_.e; ++k) {
      const auto& e = prog_.edges[static_cast<std::size_t>(k)];
      const Index yi = lay_.y(static_cast<Index>(e.dst)), yj = lay_.y(static_cast<Index>(e.src));
      const double z = e.rate * std::exp(x[yi] - x[yj]);
      const Index idx[] = {lay_.u(k), yi, yj};
      const double g[] = {1.0, -z, z};
      const double h[] = {0.0, 0.0, 0.0, 0.0, -z, z, 0.0, z, -z};
      term(3, idx, g, h, x[lay_.u(k)] - z);
    }
    budget_slack = 0.0;
    if (budget_) {
      const double h = prog_.domain.budget - spent;
      budget_slack = h;
      for (Index i = 0; i < lay_.n; ++i) {
        const double d = x[lay_.d(i)];
        grad[lay_.d(i)] += mu * border[i] / h;
        hess.emplace_back(lay_.d(i), lay_.d(i), mu * curves_[static_cast<std::size_t>(i)].second(d) / h);
      }
    }
  }

 private:
  const RelaxProgram& prog_;
  Layout lay_;
  std::vector<InvestmentCurve> curves_;
  double d_max_ = kInf;
  bool budget_ = false;
};

Eigen::VectorXd in_degree_rates(const RelaxProgram& prog) {
  Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Index>(prog.n));
  for (const auto& e : prog.edges) r[static_cast<Index>(e.dst)] += e.rate;
  return r;
}

Eigen::VectorXd infection_times(const RelaxProgram& prog, const Eigen::VectorXd& p) {
  Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Index>(prog.n));
  for (const auto& e : prog.edges) r[static_cast<Index>(e.dst)] += e.rate * p[static_cast<Index>(e.src)];
  return r;
}

/// Strictly feasible point with the equality satisfied exactly.
Eigen::VectorXd interior_start(const RelaxProgram& prog) {
  const Layout lay{static_cast<Index>(prog.n), static_cast<Index>(prog.edges.size())};
  Eigen::VectorXd x(lay.size());
  const Eigen::VectorXd b1 = in_degree_rates(prog);
  std::vector<std::size_t> indeg(prog.n, 0);
  for (const auto& e : prog.edges) ++indeg[e.dst];

  double y0 = 1.0;
  for (Index i = 0; i < lay.n; ++i) {
    double d;
    if (prog.domain.kind == DomainSpec::Kind::budget) {
      const double s = 0.5 * prog.domain.budget / static_cast<double>(prog.n);
      d = std::pow(1.0 + prog.kappa[i] * s, prog.breach_exp[i]);
    } else {
      d = std::min(2.0, 0.5 * (1.0 + prog.effective_d_max()));
    }
    x[lay.d(i)] = d;
    const double denom = prog.lambda[i] + b1[i];
    if (denom > 0) y0 = std::min(y0, 0.25 * prog.delta[i] * d / denom);
  }
  const double p0 = 0.5 * (1.0 + std::exp(-y0));
  for (Index i = 0; i < lay.n; ++i) {
    x[lay.p(i)] = p0;
    x[lay.y(i)] = y0;
  }
  const Eigen::VectorXd bp = infection_times(prog, x.segment(lay.n, lay.n));
  Eigen::VectorXd slack(lay.n);
  for (Index i = 0; i < lay.n; ++i) {
    slack[i] = prog.lambda[i] + bp[i] + prog.delta[i] * x[lay.d(i)] - prog.lambda[i] * std::exp(y0) - b1[i];
    if (!(slack[i] > 0)) throw NumericError("relaxation: failed to construct an interior start");
    const double share = indeg[static_cast<std::size_t>(i)] ? 0.5 : 1.0;
    x[lay.t(i)] = prog.lambda[i] * std::exp(y0) + share * slack[i];
  }
  for (Index k = 0; k < lay.e; ++k) {
    const auto& e = prog.edges[static_cast<std::size_t>(k)];
    x[lay.u(k)] = e.rate + 0.5 * slack[static_cast<Index>(e.dst)] / static_cast<double>(indeg[e.dst]);
  }
  return x;
}

/// The dependence graph the program was built from, attacks already perturbed.
DependenceGraph program_graph(const RelaxProgram& prog) {
  std::vector<NodeParams> nodes(prog.n);
  for (std::size_t i = 0; i < prog.n; ++i) {
    const auto k = static_cast<Index>(i);
    nodes[i] = {prog.lambda[k], prog.delta[k], prog.c[k], prog.kappa[k], prog.breach_exp[k]};
  }
  return DependenceGraph(std::move(nodes), prog.edges);
}

}  // namespace

DomainSpec DomainSpec::from(const FeasibleSet& s) {
  return s.kind == FeasibleKind::budget_simplex ? budget_image(s.budget) : box();
}

std::size_t RelaxProgram::inequality_count() const {
  return 6 * n + edges.size() + (domain.kind == DomainSpec::Kind::box ? n : 1);
}

double RelaxProgram::investment_of(std::size_t i, double d) const {
  return InvestmentCurve{kappa[static_cast<Index>(i)], breach_exp[static_cast<Index>(i)]}.value(d);
}

double RelaxProgram::investment_cost(const Eigen::VectorXd& d) const {
  double w = 0.0;
  for (std::size_t i = 0; i < n; ++i) w += weights[static_cast<Index>(i)] * investment_of(i, d[static_cast<Index>(i)]);
  return w;
}

double RelaxProgram::objective(const Eigen::VectorXd& d, const Eigen::VectorXd& p) const {
  return investment_cost(d) + c.dot(p);
}

RelaxProgram build_relaxation(const InvestmentProblem& prob, const DomainSpec& domain) {
  const auto& g = prob.graph();
  RelaxProgram prog;
  prog.n = g.size();
  prog.edges = g.edges();
  prog.lambda = prob.attack();
  prog.delta = g.delta();
  prog.c = prob.infection_cost();
  prog.weights = prob.investment_weights();
  prog.kappa.resize(static_cast<Index>(prog.n));
  prog.breach_exp.resize(static_cast<Index>(prog.n));
  for (std::size_t i = 0; i < prog.n; ++i) {
    const auto& node = g.node(i);
    if (node.breach_exp > 1.0) {
      throw InputError("relaxation: breach exponent " + std::to_string(node.breach_exp) + " at node " +
                       std::to_string(i) + " makes the investment cost nonconvex in d; use a convex lower bound");
    }
    prog.kappa[static_cast<Index>(i)] = node.kappa;
    prog.breach_exp[static_cast<Index>(i)] = node.breach_exp;
  }
  if ((prog.weights.array() < 0).any()) {
    throw InputError("relaxation: negative investment weights make the cost nonconvex in d; use a convex lower bound");
  }
  if (domain.kind == DomainSpec::Kind::box && !(domain.d_max > 1.0)) throw InputError("relaxation: d_max must exceed 1");
  if (domain.kind == DomainSpec::Kind::budget && !(domain.budget > 0)) throw InputError("relaxation: budget must be > 0");
  prog.domain = domain;

  const Layout lay{static_cast<Index>(prog.n), static_cast<Index>(prog.edges.size())};
  std::vector<Triplet> trip;
  for (Index i = 0; i < lay.n; ++i) {
    trip.emplace_back(i, lay.t(i), 1.0);
    trip.emplace_back(i, lay.d(i), -prog.delta[i]);
  }
  for (Index k = 0; k < lay.e; ++k) {
    const auto& e = prog.edges[static_cast<std::size_t>(k)];
    trip.emplace_back(static_cast<Index>(e.dst), lay.u(k), 1.0);
    trip.emplace_back(static_cast<Index>(e.dst), lay.p(static_cast<Index>(e.src)), -e.rate);
  }
  prog.equality.resize(lay.n, lay.size());
  prog.equality.setFromTriplets(trip.begin(), trip.end());
  return prog;
}

RelaxProgram build_relaxation(const InvestmentProblem& prob) {
  return build_relaxation(prob, DomainSpec::from(prob.feasible()));
}

RelaxSolution solve_barrier(const RelaxProgram& prog, const BarrierSettings& settings) {
  if (!(settings.mu0 > 0 && settings.mu_factor > 1 && settings.mu_final > 0 && settings.mu_final <= settings.mu0)) {
    throw InputError("barrier: need mu0 >= mu_final > 0 and mu_factor > 1");
  }
  const BarrierFunction fn(prog);
  const Layout& lay = fn.layout();
  const Index nx = lay.size();
  const Index nb = fn.budget() ? 1 : 0;
  const Index row0 = nx + nb;
  const Index nk = row0 + lay.n;
  const auto& a = prog.equality;

  Eigen::VectorXd x = interior_start(prog);
  Eigen::VectorXd nu = Eigen::VectorXd::Zero(lay.n);
  Eigen::VectorXd grad, border;
  std::vector<Triplet> trip;
  Eigen::SparseMatrix<double> kkt(nk, nk);
  Eigen::SparseMatrix<double> kkt_reg(nk, nk);
  // [H A^T; A -gamma I] is quasi-definite (H is positive definite), so an
  // LDL^T without pivoting exists for any symmetric ordering and fills far
  // less than a pivoted LU. Refinement against the exact system removes the
  // regularization.
  constexpr double kRegularization = 1e-10;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;  // fallback when a pivot breaks down
  bool analyzed = false, lu_analyzed = false;

  RelaxSolution sol;
  double mu = settings.mu0;
  for (std::size_t stage = 0;; ++stage) {
    double last_lam2 = kInf;
    double last_stat = kInf;
    int stagnant = 0;
    for (std::size_t it = 0;; ++it) {
      if (it >= settings.max_newton) {
        std::ostringstream os;
        os << "barrier stage " << stage << " (mu=" << mu << "): Newton did not converge in " << settings.max_newton
           << " iterations";
        throw NumericError(os.str());
      }
      double h = 0.0;
      fn.derivatives(x, mu, grad, trip, border, h);
      for (int k = 0; k < a.outerSize(); ++k) {
        for (Eigen::SparseMatrix<double>::InnerIterator e(a, k); e; ++e) {
          trip.emplace_back(row0 + e.row(), e.col(), e.value());
          trip.emplace_back(e.col(), row0 + e.row(), e.value());
        }
      }
      if (nb) {
        for (Index i = 0; i < lay.n; ++i) {
          trip.emplace_back(lay.d(i), nx, border[i]);
          trip.emplace_back(nx, lay.d(i), border[i]);
        }
        trip.emplace_back(nx, nx, -h * h / mu);
      }
      kkt.setFromTriplets(trip.begin(), trip.end());
      for (Index i = 0; i < lay.n; ++i) trip.emplace_back(row0 + i, row0 + i, -kRegularization);
      kkt_reg.setFromTriplets(trip.begin(), trip.end());
      if (!analyzed) {
        ldlt.analyzePattern(kkt_reg);
        analyzed = true;
      }
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nk);
      rhs.head(nx) = -grad;
      rhs.tail(lay.n) = prog.lambda - a * x;
      const double rhs_norm = std::max(rhs.lpNorm<Eigen::Infinity>(), std::numeric_limits<double>::min());
      Eigen::VectorXd z;
      bool solved = false;
      ldlt.factorize(kkt_reg);
      if (ldlt.info() == Eigen::Success) {
        z = ldlt.solve(rhs);
        for (int refine = 0; refine < 3; ++refine) z += ldlt.solve(rhs - kkt * z);
        solved = z.allFinite() && (rhs - kkt * z).lpNorm<Eigen::Infinity>() <= 1e-10 * rhs_norm;
      }
      if (!solved) {
        if (!lu_analyzed) {
          lu.analyzePattern(kkt);
          lu_analyzed = true;
        }
        lu.factorize(kkt);
        if (lu.info() != Eigen::Success) {
          std::ostringstream os;
          os << "barrier stage " << stage << " (mu=" << mu << "): singular KKT system";
          throw NumericError(os.str());
        }
        z = lu.solve(rhs);
        z += lu.solve(rhs - kkt * z);  // one step of iterative refinement
      }
      const Eigen::VectorXd dx = z.head(nx);
      nu = z.tail(lay.n);

      const double stationarity = (grad + a.transpose() * nu).lpNorm<Eigen::Infinity>();
      const double decrement = -grad.dot(dx);
      const double lam2 = decrement / mu;  // squared Newton decrement of Phi / mu
      if (stationarity <= settings.grad_tol || lam2 <= 1e-20) break;
      const double phi0 = fn.value(x, mu);
      // Below a few ulps of Phi a line search only sees rounding noise.
      const double floor = 64 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(phi0));
      if (lam2 < 0.1 || decrement <= floor) {
        // Local region: full steps while either the decrement or the
        // stationarity residual keeps shrinking.
        const bool progress = lam2 <= 0.5 * last_lam2 || stationarity <= 0.5 * last_stat;
        if (!progress && ++stagnant >= 3) break;
        if (std::isfinite(fn.value(x + dx, mu))) {
          last_lam2 = std::min(last_lam2, lam2);
          last_stat = std::min(last_stat, stationarity);
          x += dx;
          ++sol.newton_iterations;
          continue;
        }
        if (decrement <= floor) break;
      }

      double step = 1.0;
      while (step > 1e-20 && !std::isfinite(fn.value(x + step * dx, mu))) step *= 0.5;
      double phi1 = fn.value(x + step * dx, mu);
      while (step > 1e-20 && phi1 > phi0 - 1e-4 * step * decrement) {
        step *= 0.5;
        phi1 = fn.value(x + step * dx, mu);
      }
      if (!(step > 1e-20)) {
        std::ostringstream os;
        os << "barrier stage " << stage << " (mu=" << mu << "): line search stalled, Newton decrement " << decrement;
        throw NumericError(os.str());
      }
      x += step * dx;
      ++sol.newton_iterations;
    }
    sol.stages = stage + 1;
    if (mu <= settings.mu_final * (1 + 1e-12)) break;
    mu = std::max(mu / settings.mu_factor, settings.mu_final);
  }

  const Index n = lay.n;
  sol.d = x.segment(0, n);
  sol.p = x.segment(n, n);
  sol.y = x.segment(2 * n, n);
  sol.t = x.segment(3 * n, n);
  sol.u = x.tail(lay.e);
  sol.sigma = nu;
  sol.mu = mu;
  sol.mu_t.resize(n);
  sol.mu_p.resize(n);
  sol.mu_p_upper.resize(n);
  sol.mu_y.resize(n);
  for (Index i = 0; i < n; ++i) {
    sol.mu_t[i] = mu / (sol.t[i] - prog.lambda[i] * std::exp(sol.y[i]));
    sol.mu_p[i] = mu / (sol.p[i] - std::exp(-sol.y[i]));
    sol.mu_p_upper[i] = mu / (1.0 - sol.p[i]);
    sol.mu_y[i] = mu / sol.y[i];
  }
  sol.phi.resize(lay.e);
  for (Index k = 0; k < lay.e; ++k) {
    const auto& e = prog.edges[static_cast<std::size_t>(k)];
    sol.phi[k] = mu / (sol.u[k] - e.rate * std::exp(sol.y[static_cast<Index>(e.dst)] - sol.y[static_cast<Index>(e.src)]));
  }
  sol.value = prog.objective(sol.d, sol.p);
  sol.duality_gap = static_cast<double>(prog.inequality_count()) * mu;
  sol.equality_residual = (a * x - prog.lambda).lpNorm<Eigen::Infinity>();
  if (prog.domain.kind == DomainSpec::Kind::box && !std::isfinite(prog.domain.d_max)) {
    sol.cap_active = (prog.d_cap - sol.d.array() <= 1e-3 * prog.d_cap).any();
  }
  return sol;
}

RecoveredPoint recover_feasible(const RelaxProgram& prog, const RelaxSolution& sol) {
  const Index n = static_cast<Index>(prog.n);
  RecoveredPoint r;
  r.p = (-sol.y.array()).exp().matrix();
  const Eigen::VectorXd bp_prime = infection_times(prog, r.p);
  const Eigen::VectorXd closed_form_d =
      sol.d + (infection_times(prog, sol.p) - bp_prime).cwiseQuotient(prog.delta);
  r.d.resize(n);
  for (Index i = 0; i < n; ++i) {
    // (1/p' - 1) = expm1(y) keeps accuracy for small y.
    double d = std::expm1(sol.y[i]) * (prog.lambda[i] + bp_prime[i]) / prog.delta[i];
    if (d < 1.0 - 1e-9) ++r.clipped_nodes;
    r.d[i] = std::max(d, 1.0);
  }
  r.formula_discrepancy = (r.d - closed_form_d).lpNorm<Eigen::Infinity>();
  r.s.resize(n);
  for (Index i = 0; i < n; ++i) r.s[i] = prog.investment_of(static_cast<std::size_t>(i), r.d[i]);

  if (r.clipped_nodes > 0) {
    // Slack t/U rows (sigma_i = 0, possible when c_i = 0) can ask for d < 1.
    // Keep d' clipped at 1 and pair it with the equilibrium it induces.
    const DependenceGraph g = program_graph(prog);
    r.p = stable_equilibrium(g, condense(g), r.s, prog.lambda).p_bar;
    r.ep_residual = equilibrium_residual(g, r.p, r.s, prog.lambda).lpNorm<Eigen::Infinity>();
  } else {
    Eigen::VectorXd res(n);
    for (Index i = 0; i < n; ++i) {
      res[i] = std::expm1(sol.y[i]) * (prog.lambda[i] + bp_prime[i]) - r.d[i] * prog.delta[i];
    }
    r.ep_residual = res.lpNorm<Eigen::Infinity>();
  }
  if (r.ep_residual > 1e-8) {
    std::ostringstream os;
    os << "recovery: equilibrium residual " << r.ep_residual << " exceeds 1e-8";
    throw NumericError(os.str());
  }
  if (prog.domain.kind == DomainSpec::Kind::budget) {
    r.in_domain = r.s.sum() <= prog.domain.budget * (1 + 1e-12) + 1e-12;
  } else {
    r.in_domain = (r.d.array() <= prog.domain.d_max * (1 + 1e-12)).all();
  }
  r.value = prog.objective(r.d, r.p);
  return r;
}

const char* to_string(ExactnessVerdict v) {
  switch (v) {
    case ExactnessVerdict::exact: return "exact";
    case ExactnessVerdict::not_exact: return "not_exact";
    case ExactnessVerdict::inconclusive: return "inconclusive";
  }
  return "?";
}

ExactnessCheck check_exactness(const RelaxProgram& prog) {
  const Index n = static_cast<Index>(prog.n);
  ExactnessCheck out;
  Eigen::VectorXd scaled(n);  // diag(delta^-1) grad w~(d_sup)
  for (Index i = 0; i < n; ++i) {
    const double b = prog.breach_exp[i], kappa = prog.kappa[i], w = prog.weights[i];
    double grad;
    if (b == 1.0 || w == 0.0) {
      grad = w / kappa;
    } else {
      const double d_sup = prog.domain.kind == DomainSpec::Kind::budget
                               ? std::pow(1.0 + kappa * prog.domain.budget, b)
                               : prog.domain.d_max;
      if (!std::isfinite(d_sup)) {
        out.reason = "gradient of the investment cost is unbounded on D at node " + std::to_string(i);
        return out;
      }
      grad = w * InvestmentCurve{kappa, b}.first(d_sup);
    }
    scaled[i] = grad / prog.delta[i];
  }
  out.margins = -prog.c;
  for (const auto& e : prog.edges) out.margins[static_cast<Index>(e.src)] += e.rate * scaled[static_cast<Index>(e.dst)];
  bool exact = true;
  for (Index j = 0; j < n; ++j) {
    if (out.margins[j] > 1e-12 * std::max(1.0, std::abs(prog.c[j]))) {
      if (exact) out.reason = "condition fails first at node " + std::to_string(j);
      exact = false;
    }
  }
  out.verdict = exact ? ExactnessVerdict::exact : ExactnessVerdict::not_exact;
  return out;
}

double BoundsReport::upper() const {
  return upper_rgm ? std::min(upper_recovered, *upper_rgm) : upper_recovered;
}

void BoundsReport::finalize() { gap_rel = (upper() - lower) / std::max(1.0, std::abs(lower)); }

nlohmann::json to_json(const BoundsReport& r) {
  nlohmann::json j{{"lower", r.lower},
                   {"upper_recovered", r.upper_recovered},
                   {"upper_rgm", nullptr},
                   {"exact", r.exact},
                   {"gap_rel", r.gap_rel},
                   {"timings", {{"relax_seconds", r.relax_seconds}, {"rgm_seconds", r.rgm_seconds}}}};
  if (r.upper_rgm) j["upper_rgm"] = *r.upper_rgm;
  return j;
}

}  // namespace sisinvest
