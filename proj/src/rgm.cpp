#include "sisinvest/rgm.hpp"

#include <cmath>
#include <ostream>

#include <Eigen/SparseLU>

#include "sisinvest/breach.hpp"
#include "sisinvest/errors.hpp"

namespace sisinvest {

Evaluation evaluate(const InvestmentProblem& prob, const Eigen::VectorXd& s, const Eigen::VectorXd* warm_start) {
  if (static_cast<std::size_t>(s.size()) != prob.size()) throw InputError("investment vector has the wrong dimension");
  if (!s.allFinite() || (s.array() < 0).any()) throw InputError("investments must be finite and >= 0");
  Evaluation ev;
  ev.p_bar = stable_equilibrium(prob.graph(), prob.condensation(), s, prob.attack(), warm_start).p_bar;
  ev.value = prob.cost().value(s) + prob.infection_cost().dot(ev.p_bar);
  return ev;
}

double objective(const InvestmentProblem& prob, const Eigen::VectorXd& s) { return evaluate(prob, s).value; }

Eigen::VectorXd gradient_at(const InvestmentProblem& prob, const Eigen::VectorXd& s, const Eigen::VectorXd& p_bar) {
  if (!(prob.epsilon() > 0)) throw InputError("gradient requires epsilon > 0");
  const auto& g = prob.graph();
  const Eigen::SparseMatrix<double> mt = Eigen::SparseMatrix<double>(-equilibrium_jacobian(g, p_bar, s, prob.attack())).transpose();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(mt);
  if (lu.info() != Eigen::Success) throw NumericError("gradient: singular equilibrium Jacobian");
  const Eigen::VectorXd adj = lu.solve(prob.infection_cost());
  if (!adj.allFinite()) throw NumericError("gradient: singular equilibrium Jacobian");

  // dg/ds_i = -d'(s_i) delta_i p_i e_i
  Eigen::VectorXd grad = prob.investment_weights();
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const auto& node = g.node(static_cast<NodeId>(i));
    grad[i] -= BreachModel::of(node).inv_q_prime(s[i]) * node.delta * p_bar[i] * adj[i];
  }
  return grad;
}

Eigen::VectorXd gradient(const InvestmentProblem& prob, const Eigen::VectorXd& s) {
  if (!(prob.epsilon() > 0)) throw InputError("gradient requires epsilon > 0");
  return gradient_at(prob, s, evaluate(prob, s).p_bar);
}

void RgmSettings::validate() const {
  if (!(gamma0 > 0)) throw InputError("rgm: gamma0 must be > 0");
  if (!(shrink > 0 && shrink < 1)) throw InputError("rgm: shrink must lie in (0, 1)");
  if (!(armijo_c > 0 && armijo_c < 1)) throw InputError("rgm: armijo_c must lie in (0, 1)");
  if (!(grad_tol > 0)) throw InputError("rgm: grad_tol must be > 0");
  if (!(min_step > 0)) throw InputError("rgm: min_step must be > 0");
}

const char* to_string(RgmStatus s) {
  switch (s) {
    case RgmStatus::converged: return "converged";
    case RgmStatus::max_iters: return "max_iters";
    case RgmStatus::stalled: return "stalled";
  }
  return "?";
}

RgmResult solve_rgm(const InvestmentProblem& prob, const Eigen::VectorXd& s0, const RgmSettings& settings) {
  settings.validate();
  if (!(prob.epsilon() > 0)) throw InputError("rgm refuses eps = 0: optimize the perturbed problem");
  const auto& S = prob.feasible();
  RgmResult r;
  r.s = s0.size() == 0 ? Eigen::VectorXd::Zero(static_cast<Eigen::Index>(prob.size())) : s0;
  if (static_cast<std::size_t>(r.s.size()) != prob.size()) throw InputError("rgm: s0 has the wrong dimension");
  if (!S.contains(r.s, 1e-12)) throw InputError("rgm: s0 is not feasible");
  r.s = S.project(r.s);

  Evaluation ev = evaluate(prob, r.s);
  Eigen::VectorXd grad = gradient_at(prob, r.s, ev.p_bar);
  double step = 0.0;
  for (std::size_t iter = 0;; ++iter) {
    r.grad_norm = (r.s - S.project(r.s - grad)).lpNorm<Eigen::Infinity>();
    r.log.push_back({iter, ev.value, step, r.grad_norm});
    if (r.grad_norm <= settings.grad_tol) {
      r.status = RgmStatus::converged;
      break;
    }
    if (iter >= settings.max_iters) {
      r.status = RgmStatus::max_iters;
      break;
    }
    bool accepted = false;
    for (double gamma = settings.gamma0; gamma >= settings.min_step; gamma *= settings.shrink) {
      Eigen::VectorXd trial = S.project(r.s - gamma * grad);
      const double decrease = grad.dot(trial - r.s);
      Evaluation tev = evaluate(prob, trial, &ev.p_bar);
      if (tev.value <= ev.value + settings.armijo_c * decrease) {
        r.s = std::move(trial);
        ev = std::move(tev);
        step = gamma;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      r.status = RgmStatus::stalled;
      break;
    }
    grad = gradient_at(prob, r.s, ev.p_bar);
  }
  r.value = ev.value;
  r.p_bar = std::move(ev.p_bar);
  return r;
}

void write_iterate_log_csv(std::ostream& os, const std::vector<RgmIterate>& log) {
  os << "iter,F,step,grad_norm\n";
  const auto old = os.precision(17);
  for (const auto& it : log) os << it.iter << ',' << it.value << ',' << it.step << ',' << it.grad_norm << '\n';
  os.precision(old);
}

}  // namespace sisinvest
