#include "sisinvest/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include <Eigen/SparseLU>

#include "sisinvest/errors.hpp"

namespace sisinvest {

PerturbationScheme PerturbationScheme::unattacked(const DependenceGraph& g, double eps) {
  std::vector<NodeId> targets;
  for (NodeId i = 0; i < g.size(); ++i) {
    if (g.node(i).lambda == 0) targets.push_back(i);
  }
  return selective(eps, std::move(targets));
}

PerturbationScheme PerturbationScheme::accessible(const Condensation& cond, double eps) {
  std::vector<NodeId> targets;
  for (NodeId i = 0; i < cond.component_of.size(); ++i) {
    if (!cond.node_exposed(i)) targets.push_back(i);
  }
  return selective(eps, std::move(targets));
}

PerturbationScheme PerturbationScheme::with_epsilon(double eps) const {
  PerturbationScheme out = *this;
  out.epsilon = eps;
  return out;
}

Eigen::VectorXd PerturbationScheme::direction(std::size_t n) const {
  if (mode == PerturbationMode::uniform) return Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (NodeId i : targets) {
    if (i >= n) throw InputError("perturbation target " + std::to_string(i) + " out of range");
    e[static_cast<Eigen::Index>(i)] = 1.0;
  }
  return e;
}

Eigen::VectorXd PerturbationScheme::apply(const DependenceGraph& g) const {
  return g.lambda() + epsilon * direction(g.size());
}

void PerturbationScheme::validate(const DependenceGraph& g, const Condensation& cond) const {
  if (!(epsilon >= 0) || !std::isfinite(epsilon)) throw InputError("perturbation epsilon must be finite and >= 0");
  if (mode == PerturbationMode::uniform) return;
  const Eigen::VectorXd e = direction(g.size());
  for (std::size_t v = 0; v < cond.size(); ++v) {
    if (cond.exposed[v]) continue;
    const bool covered = std::any_of(cond.msccs[v].begin(), cond.msccs[v].end(),
                                     [&](NodeId i) { return e[static_cast<Eigen::Index>(i)] > 0; });
    if (!covered) {
      throw InputError("selective perturbation leaves accessible MSCC " + std::to_string(v) +
                       " (node " + std::to_string(cond.msccs[v].front()) + ") unperturbed");
    }
  }
}

SweepResult sweep_equilibrium(const DependenceGraph& g, const Eigen::VectorXd& s,
                              const std::vector<double>& epsilons, const PerturbationScheme& scheme,
                              bool warm_start) {
  for (std::size_t k = 0; k < epsilons.size(); ++k) {
    if (!(epsilons[k] > 0)) throw InputError("sweep: epsilons must be strictly positive");
    if (k > 0 && !(epsilons[k] < epsilons[k - 1])) throw InputError("sweep: epsilons must be strictly decreasing");
  }
  const Condensation cond = condense(g);
  scheme.validate(g, cond);

  SweepResult out;
  out.baseline = stable_equilibrium(g, cond, s, g.lambda()).p_bar;
  const Eigen::VectorXd* warm = nullptr;
  for (double eps : epsilons) {
    SweepPoint pt;
    pt.epsilon = eps;
    try {
      pt.p_bar = stable_equilibrium(g, cond, s, scheme.with_epsilon(eps).apply(g), warm).p_bar;
    } catch (const NumericError& ex) {
      std::ostringstream os;
      os << "sweep at eps=" << eps << ": " << ex.what();
      throw NumericError(os.str());
    }
    pt.deviation = (pt.p_bar - out.baseline).lpNorm<Eigen::Infinity>();
    out.points.push_back(std::move(pt));
    if (warm_start) warm = &out.points.back().p_bar;
  }
  return out;
}

Eigen::VectorXd sensitivity_deps(const DependenceGraph& g, const Eigen::VectorXd& s,
                                 const PerturbationScheme& scheme) {
  if (!(scheme.epsilon > 0)) throw InputError("sensitivity_deps: epsilon must be > 0");
  const Condensation cond = condense(g);
  scheme.validate(g, cond);
  const Eigen::VectorXd lam = scheme.apply(g);
  const auto eq = stable_equilibrium(g, cond, s, lam);
  Eigen::SparseMatrix<double> m = -equilibrium_jacobian(g, eq.p_bar, s, lam);
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(m);
  if (lu.info() != Eigen::Success) throw NumericError("sensitivity_deps: singular Jacobian");
  const Eigen::VectorXd rhs = ((1.0 - eq.p_bar.array()) * scheme.direction(g.size()).array()).matrix();
  Eigen::VectorXd out = lu.solve(rhs);
  if (!out.allFinite()) throw NumericError("sensitivity_deps: singular Jacobian");
  return out;
}

std::vector<double> log_grid(double hi, double lo, std::size_t count) {
  if (!(hi > 0 && lo > 0 && hi >= lo) || count == 0) throw InputError("log_grid: need hi >= lo > 0 and count > 0");
  std::vector<double> out;
  if (count == 1) return {hi};
  const double a = std::log10(hi), b = std::log10(lo);
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(std::pow(10.0, a + (b - a) * static_cast<double>(k) / static_cast<double>(count - 1)));
  }
  out.front() = hi;
  out.back() = lo;
  return out;
}

std::vector<double> default_epsilon_grid() { return log_grid(1e-1, 1e-5, 17); }

void write_perturbation_csv(std::ostream& os, const std::vector<PerturbationRow>& rows) {
  os << "epsilon,F_lower,F_upper_recovered,F_rgm,max_p_deviation\n";
  const auto old = os.precision(17);
  auto field = [&](const std::optional<double>& v) {
    os << ',';
    if (v) os << *v;
  };
  for (const auto& r : rows) {
    os << r.epsilon;
    field(r.f_lower);
    field(r.f_upper_recovered);
    field(r.f_rgm);
    field(r.max_p_deviation);
    os << '\n';
  }
  os.precision(old);
}

}  // namespace sisinvest
