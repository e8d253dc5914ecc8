#include "sisinvest/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "sisinvest/dynamics.hpp"
#include "sisinvest/errors.hpp"

namespace sisinvest {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json to_array(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

std::string eps_label(double eps) {
  std::ostringstream os;
  os << std::setprecision(6) << eps;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Strict reader for one config object: absent keys keep their defaults and
/// unknown keys are rejected so that typos cannot pass silently.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InputError("config: " + where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw InputError("config: " + where_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw InputError("config: unknown key " + where_ + "." + item.key());
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <class E>
E parse_enum(const std::string& where, const std::string& value,
             std::initializer_list<std::pair<const char*, E>> table) {
  std::string names;
  for (const auto& [name, e] : table) {
    if (value == name) return e;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw InputError("config: " + where + " must be one of " + names + ", got '" + value + "'");
}

const char* to_string(GeneratorSpec::Kind k) { return k == GeneratorSpec::Kind::two_block ? "two_block" : "oriented"; }
const char* to_string(AttackSpec::Placement p) {
  return p == AttackSpec::Placement::last_block ? "last_block" : "anywhere";
}

std::vector<std::vector<NodeId>> block_members(const GeneratorSpec& gen) {
  std::vector<std::vector<NodeId>> blocks;
  NodeId next = 0;
  for (std::size_t size : gen.sizes) {
    std::vector<NodeId> members(size);
    for (auto& m : members) m = next++;
    blocks.push_back(std::move(members));
  }
  return blocks;
}

std::size_t max_degree_for(const GeneratorSpec& gen, std::size_t size) {
  return gen.max_degree == 0 ? default_max_degree(size) : gen.max_degree;
}

json document_header(const ExperimentConfig& c, const char* command) {
  return {{"command", command}, {"config", to_json(c)}, {"config_hash", config_hash(c)}, {"seeds", seed_record(c)}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  os << text;
  if (!os) throw InputError("write failed for " + path.string());
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
}

const char* error_kind(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const InputError&) {
    return "input";
  } catch (const ValidationError&) {
    return "validation";
  } catch (const NumericError&) {
    return "numeric";
  } catch (...) {
    return "other";
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

const char* to_string(PerturbationTarget t) {
  switch (t) {
    case PerturbationTarget::uniform: return "uniform";
    case PerturbationTarget::accessible: return "accessible";
    case PerturbationTarget::unattacked: return "unattacked";
  }
  return "?";
}

ExperimentConfig ExperimentConfig::two_block(double nu) {
  ExperimentConfig c;
  c.cost.nu = nu;
  return c;
}

ExperimentConfig ExperimentConfig::oriented(std::size_t size) {
  ExperimentConfig c;
  c.generator.kind = GeneratorSpec::Kind::oriented;
  c.generator.sizes = {size};
  c.generator.cross_edges = 0;
  c.attack.placement = AttackSpec::Placement::anywhere;
  c.attack.count = size / 2;
  c.attack.value = 0.01;
  c.cost.nu = 0.8;
  c.cost.c_rand_weight = 0.0;
  c.perturbation = PerturbationTarget::unattacked;
  return c;
}

void ExperimentConfig::reseed(std::uint64_t seed) {
  generator.seed = seed;
  attack.seed = seed + 1;
  cost.c_rand_seed = seed + 2;
}

void ExperimentConfig::validate() const {
  const auto& g = generator;
  if (g.sizes.empty()) throw InputError("config: generator.sizes is empty");
  for (std::size_t s : g.sizes) {
    if (s < 2) throw InputError("config: generator block sizes must be >= 2");
  }
  if (g.kind == GeneratorSpec::Kind::oriented && g.sizes.size() != 1) {
    throw InputError("config: the oriented generator takes exactly one size");
  }
  if (!(std::isfinite(g.power) && g.power > 0)) throw InputError("config: generator.power must be positive");
  if (g.min_degree < 1) throw InputError("config: generator.min_degree must be >= 1");
  if (g.max_degree != 0 && g.max_degree < g.min_degree) {
    throw InputError("config: generator.max_degree below min_degree");
  }
  if (!(std::isfinite(delta) && delta > 0)) throw InputError("config: delta must be positive");
  if (!(beta_range.first >= 0 && beta_range.second >= beta_range.first && std::isfinite(beta_range.second))) {
    throw InputError("config: beta_range must satisfy 0 <= lo <= hi");
  }
  if (kappa && !(std::isfinite(*kappa) && *kappa > 0)) throw InputError("config: kappa must be positive");
  if (!(std::isfinite(breach_exp) && breach_exp > 0)) throw InputError("config: breach_exp must be positive");
  if (!(std::isfinite(attack.value) && attack.value >= 0)) throw InputError("config: attack.value must be >= 0");
  if (!(std::isfinite(cost.nu) && cost.nu >= 0)) throw InputError("config: cost.nu must be >= 0");
  if (!(std::isfinite(cost.c_rand_weight) && cost.c_rand_weight >= 0)) {
    throw InputError("config: cost.c_rand_weight must be >= 0");
  }
  if (feasible.kind == FeasibleKind::budget_simplex && !(std::isfinite(feasible.budget) && feasible.budget > 0)) {
    throw InputError("config: feasible.budget must be positive");
  }
  if (!(std::isfinite(epsilon) && epsilon >= 0)) throw InputError("config: epsilon must be >= 0");
  if (eps_grid.empty()) throw InputError("config: eps_grid is empty");
  for (std::size_t k = 0; k < eps_grid.size(); ++k) {
    if (!(std::isfinite(eps_grid[k]) && eps_grid[k] > 0)) throw InputError("config: eps_grid entries must be positive");
    if (k > 0 && !(eps_grid[k] < eps_grid[k - 1])) throw InputError("config: eps_grid must be strictly decreasing");
  }
  solver.rgm.validate();
  const auto& b = solver.barrier;
  if (!(b.mu0 > 0 && b.mu_factor > 1 && b.mu_final > 0 && b.mu_final <= b.mu0 && b.grad_tol > 0 && b.max_newton > 0)) {
    throw InputError("config: invalid barrier settings");
  }
  if (!(solver.ode_horizon > 0 && solver.ode_tolerance > 0 && solver.sandwich_tolerance >= 0)) {
    throw InputError("config: invalid ODE or sandwich tolerance");
  }
}

json to_json(const ExperimentConfig& c) {
  const auto& g = c.generator;
  const auto& r = c.solver.rgm;
  const auto& b = c.solver.barrier;
  json feasible = {{"kind", c.feasible.kind == FeasibleKind::budget_simplex ? "budget" : "orthant"}};
  if (c.feasible.kind == FeasibleKind::budget_simplex) feasible["budget"] = c.feasible.budget;
  return {
      {"network",
       {{"path", c.network_path ? json(*c.network_path) : json(nullptr)},
        {"generator",
         {{"kind", to_string(g.kind)},
          {"sizes", g.sizes},
          {"power", g.power},
          {"min_degree", g.min_degree},
          {"max_degree", g.max_degree},
          {"cross_edges", g.cross_edges},
          {"seed", g.seed}}}}},
      {"params",
       {{"delta", c.delta},
        {"beta_range", {c.beta_range.first, c.beta_range.second}},
        {"kappa", c.kappa ? json(*c.kappa) : json(nullptr)},
        {"breach_exp", c.breach_exp}}},
      {"attack",
       {{"placement", to_string(c.attack.placement)},
        {"count", c.attack.count},
        {"value", c.attack.value},
        {"seed", c.attack.seed}}},
      {"cost", {{"nu", c.cost.nu}, {"c_rand_weight", c.cost.c_rand_weight}, {"c_rand_seed", c.cost.c_rand_seed}}},
      {"feasible", feasible},
      {"perturbation", to_string(c.perturbation)},
      {"epsilon", c.epsilon},
      {"eps_grid", c.eps_grid},
      {"solver",
       {{"rgm",
         {{"gamma0", r.gamma0},
          {"shrink", r.shrink},
          {"armijo_c", r.armijo_c},
          {"grad_tol", r.grad_tol},
          {"max_iters", r.max_iters},
          {"min_step", r.min_step}}},
        {"barrier",
         {{"mu0", b.mu0},
          {"mu_factor", b.mu_factor},
          {"mu_final", b.mu_final},
          {"grad_tol", b.grad_tol},
          {"max_newton", b.max_newton}}},
        {"ode_horizon", c.solver.ode_horizon},
        {"ode_tolerance", c.solver.ode_tolerance},
        {"sandwich_tolerance", c.solver.sandwich_tolerance}}}};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  ObjectReader top(j, "config");
  if (const json* net = top.sub("network")) {
    ObjectReader rn(*net, "network");
    if (const json* p = rn.sub("path"); p && !p->is_null()) {
      if (!p->is_string()) throw InputError("config: network.path must be a string or null");
      c.network_path = p->get<std::string>();
    }
    if (const json* gj = rn.sub("generator")) {
      ObjectReader rg(*gj, "network.generator");
      std::string kind = to_string(c.generator.kind);
      rg.get("kind", kind);
      c.generator.kind = parse_enum<GeneratorSpec::Kind>(
          rg.path("kind"), kind, {{"two_block", GeneratorSpec::Kind::two_block}, {"oriented", GeneratorSpec::Kind::oriented}});
      rg.get("sizes", c.generator.sizes);
      rg.get("power", c.generator.power);
      rg.get("min_degree", c.generator.min_degree);
      rg.get("max_degree", c.generator.max_degree);
      rg.get("cross_edges", c.generator.cross_edges);
      rg.get("seed", c.generator.seed);
      rg.finish();
    }
    rn.finish();
  }
  if (const json* pj = top.sub("params")) {
    ObjectReader rp(*pj, "params");
    rp.get("delta", c.delta);
    std::vector<double> range{c.beta_range.first, c.beta_range.second};
    rp.get("beta_range", range);
    if (range.size() != 2) throw InputError("config: params.beta_range must have two entries");
    c.beta_range = {range[0], range[1]};
    if (const json* k = rp.sub("kappa"); k && !k->is_null()) {
      if (!k->is_number()) throw InputError("config: params.kappa must be a number or null");
      c.kappa = k->get<double>();
    }
    rp.get("breach_exp", c.breach_exp);
    rp.finish();
  }
  if (const json* aj = top.sub("attack")) {
    ObjectReader ra(*aj, "attack");
    std::string placement = to_string(c.attack.placement);
    ra.get("placement", placement);
    c.attack.placement = parse_enum<AttackSpec::Placement>(
        ra.path("placement"), placement,
        {{"last_block", AttackSpec::Placement::last_block}, {"anywhere", AttackSpec::Placement::anywhere}});
    ra.get("count", c.attack.count);
    ra.get("value", c.attack.value);
    ra.get("seed", c.attack.seed);
    ra.finish();
  }
  if (const json* cj = top.sub("cost")) {
    ObjectReader rc(*cj, "cost");
    rc.get("nu", c.cost.nu);
    rc.get("c_rand_weight", c.cost.c_rand_weight);
    rc.get("c_rand_seed", c.cost.c_rand_seed);
    rc.finish();
  }
  if (const json* fj = top.sub("feasible")) {
    ObjectReader rf(*fj, "feasible");
    std::string kind = "orthant";
    rf.get("kind", kind);
    const auto fk = parse_enum<FeasibleKind>(
        rf.path("kind"), kind, {{"orthant", FeasibleKind::nonneg_orthant}, {"budget", FeasibleKind::budget_simplex}});
    double budget = 0.0;
    rf.get("budget", budget);
    c.feasible = fk == FeasibleKind::budget_simplex ? FeasibleSet::budget_simplex(budget) : FeasibleSet::orthant();
    rf.finish();
  }
  std::string pert = to_string(c.perturbation);
  top.get("perturbation", pert);
  c.perturbation = parse_enum<PerturbationTarget>("config.perturbation", pert,
                                                  {{"uniform", PerturbationTarget::uniform},
                                                   {"accessible", PerturbationTarget::accessible},
                                                   {"unattacked", PerturbationTarget::unattacked}});
  top.get("epsilon", c.epsilon);
  top.get("eps_grid", c.eps_grid);
  if (const json* sj = top.sub("solver")) {
    ObjectReader rs(*sj, "solver");
    if (const json* rj = rs.sub("rgm")) {
      ObjectReader rr(*rj, "solver.rgm");
      auto& r = c.solver.rgm;
      rr.get("gamma0", r.gamma0);
      rr.get("shrink", r.shrink);
      rr.get("armijo_c", r.armijo_c);
      rr.get("grad_tol", r.grad_tol);
      rr.get("max_iters", r.max_iters);
      rr.get("min_step", r.min_step);
      rr.finish();
    }
    if (const json* bj = rs.sub("barrier")) {
      ObjectReader rb(*bj, "solver.barrier");
      auto& b = c.solver.barrier;
      rb.get("mu0", b.mu0);
      rb.get("mu_factor", b.mu_factor);
      rb.get("mu_final", b.mu_final);
      rb.get("grad_tol", b.grad_tol);
      rb.get("max_newton", b.max_newton);
      rb.finish();
    }
    rs.get("ode_horizon", c.solver.ode_horizon);
    rs.get("ode_tolerance", c.solver.ode_tolerance);
    rs.get("sandwich_tolerance", c.solver.sandwich_tolerance);
    rs.finish();
  }
  top.finish();
  c.validate();
  return c;
}

std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

json seed_record(const ExperimentConfig& c) {
  const auto& g = c.generator;
  json r{{"generator", g.seed}, {"attack", c.attack.seed}, {"c_rand", c.cost.c_rand_seed}};
  if (c.network_path) {
    r["network_file"] = *c.network_path;
    return r;
  }
  if (g.kind == GeneratorSpec::Kind::two_block) {
    const std::size_t blocks = g.sizes.size();
    json topo = json::array(), cross = json::array();
    for (std::size_t k = 0; k < blocks; ++k) topo.push_back(g.seed + k);
    for (std::size_t k = 0; k + 1 < blocks; ++k) cross.push_back(g.seed + blocks + k);
    r["block_topology"] = topo;
    r["cross_edges"] = cross;
  } else {
    r["topology"] = g.seed;
    r["orientation"] = g.seed + 1;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Networks

GeneratedNetwork generate_network(const ExperimentConfig& c) {
  c.validate();
  const auto& gen = c.generator;
  const auto [beta_lo, beta_hi] = c.beta_range;
  const NodeParams base{0.0, c.delta, 0.0, c.kappa.value_or(1.0 / c.delta), c.breach_exp};

  std::vector<Edge> edges;
  std::size_t n = 0;
  if (gen.kind == GeneratorSpec::Kind::two_block) {
    for (std::size_t k = 0; k < gen.sizes.size(); ++k) {
      const std::size_t size = gen.sizes[k];
      for (const auto& e : generate_scale_free(size, gen.power, gen.min_degree, max_degree_for(gen, size), gen.seed + k,
                                               beta_lo, beta_hi)) {
        edges.push_back({e.src + n, e.dst + n, e.rate});
      }
      n += size;
    }
  } else {
    n = gen.sizes[0];
    const auto topo = generate_scale_free_topology(n, gen.power, gen.min_degree, max_degree_for(gen, n), gen.seed);
    std::mt19937_64 rng(gen.seed + 1);
    std::uniform_real_distribution<double> rate(beta_lo, beta_hi);
    std::bernoulli_distribution flip(0.5);
    for (auto [a, b] : topo.links) {
      if (flip(rng)) std::swap(a, b);
      edges.push_back({a, b, rate(rng)});
    }
  }
  DependenceGraph g(std::vector<NodeParams>(n, base), std::move(edges));

  const auto blocks = block_members(gen);
  if (gen.kind == GeneratorSpec::Kind::two_block) {
    for (std::size_t k = 0; k + 1 < blocks.size(); ++k) {
      g = add_cross_edges(g, blocks[k], blocks[k + 1], gen.cross_edges, c.beta_range, gen.seed + blocks.size() + k);
    }
  }
  try {
    require_weakly_connected(g);
  } catch (const InputError& e) {
    throw ValidationError(std::string("generated network: ") + e.what());
  }

  std::vector<NodeId> candidates;
  if (gen.kind == GeneratorSpec::Kind::two_block && c.attack.placement == AttackSpec::Placement::last_block) {
    candidates = blocks.back();
  } else {
    for (NodeId i = 0; i < n; ++i) candidates.push_back(i);
  }
  if (c.attack.count > candidates.size()) {
    throw InputError("config: attack.count " + std::to_string(c.attack.count) + " exceeds the " +
                     std::to_string(candidates.size()) + " eligible nodes");
  }
  std::mt19937_64 attack_rng(c.attack.seed);
  std::shuffle(candidates.begin(), candidates.end(), attack_rng);
  std::vector<NodeParams> nodes = g.nodes();
  std::vector<NodeId> attacked(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(c.attack.count));
  std::sort(attacked.begin(), attacked.end());
  for (NodeId i : attacked) nodes[i].lambda = c.attack.value;

  const Eigen::VectorXd out_rate =
      g.infection_matrix().transpose() * Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  std::mt19937_64 cost_rng(c.cost.c_rand_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (NodeId i = 0; i < n; ++i) {
    nodes[i].cost = (c.cost.nu + c.cost.c_rand_weight * unit(cost_rng)) * out_rate[static_cast<Eigen::Index>(i)];
  }
  g = g.with_nodes(std::move(nodes));

  const Condensation cond = condense(g);
  if (gen.kind == GeneratorSpec::Kind::two_block) {
    bool ok = cond.size() == blocks.size();
    for (std::size_t k = 0; ok && k < blocks.size(); ++k) {
      const std::size_t comp = cond.component_of[blocks[k].front()];
      ok = cond.msccs[comp].size() == blocks[k].size();
    }
    if (!ok) {
      throw ValidationError("generated network: condensation has " + std::to_string(cond.size()) +
                            " MSCCs, expected one per block (" + std::to_string(blocks.size()) + ")");
    }
  }

  json sizes = json::array(), exposed = json::array();
  std::size_t exposed_nodes = 0;
  for (std::size_t k = 0; k < cond.size(); ++k) {
    sizes.push_back(cond.msccs[k].size());
    exposed.push_back(static_cast<bool>(cond.exposed[k]));
    if (cond.exposed[k]) exposed_nodes += cond.msccs[k].size();
  }
  json provenance{{"generator", to_string(gen.kind)},
                  {"config_hash", config_hash(c)},
                  {"seeds", seed_record(c)},
                  {"nodes", n},
                  {"edges", g.edge_count()},
                  {"msccs", cond.size()},
                  {"mscc_sizes", sizes},
                  {"mscc_exposed", exposed},
                  {"exposed_nodes", exposed_nodes},
                  {"attacked_nodes", attacked}};
  return {std::move(g), std::move(provenance)};
}

DependenceGraph load_network(const ExperimentConfig& c) {
  if (!c.network_path) return generate_network(c).graph;
  std::ifstream is(*c.network_path, std::ios::binary);
  if (!is) throw InputError("cannot open network file " + *c.network_path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw InputError("network file " + *c.network_path + ": " + e.what());
  }
  DependenceGraph g = graph_from_json(j);
  require_weakly_connected(g);
  return g;
}

PerturbationScheme make_perturbation(const ExperimentConfig& c, const DependenceGraph& g, double eps) {
  switch (c.perturbation) {
    case PerturbationTarget::uniform: return PerturbationScheme::uniform(eps);
    case PerturbationTarget::accessible: return PerturbationScheme::accessible(condense(g), eps);
    case PerturbationTarget::unattacked: return PerturbationScheme::unattacked(g, eps);
  }
  throw InputError("unknown perturbation target");
}

InvestmentProblem make_problem(const ExperimentConfig& c, const DependenceGraph& g, double eps) {
  return InvestmentProblem(g, make_perturbation(c, g, eps), {}, c.feasible);
}

// ---------------------------------------------------------------------------
// Solving

const char* to_string(SolveMethod m) {
  switch (m) {
    case SolveMethod::rgm: return "rgm";
    case SolveMethod::relax: return "relax";
    case SolveMethod::both: return "both";
  }
  return "?";
}

SolveMethod solve_method_from_string(const std::string& s) {
  return parse_enum<SolveMethod>("method", s,
                                 {{"rgm", SolveMethod::rgm}, {"relax", SolveMethod::relax}, {"both", SolveMethod::both}});
}

const Eigen::VectorXd& SolveOutcome::best_s() const {
  if (rgm) return rgm->s;
  if (recovered) return recovered->s;
  throw InputError("solve outcome has no investment");
}

double SolveOutcome::best_value() const {
  if (rgm && recovered) return std::min(rgm->value, recovered->value);
  if (rgm) return rgm->value;
  if (recovered) return recovered->value;
  throw InputError("solve outcome has no value");
}

SolveOutcome solve_instance(const InvestmentProblem& prob, SolveMethod method, const SolverSpec& spec,
                            const Eigen::VectorXd* rgm_start) {
  SolveOutcome o;
  o.epsilon = prob.epsilon();
  o.method = method;
  const auto run = [&](const char* stage, auto&& body) {
    const std::string tag = std::string(stage) + " at eps=" + eps_label(o.epsilon) + ": ";
    try {
      body();
    } catch (const InputError& e) {
      throw InputError(tag + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(tag + e.what());
    } catch (const NumericError& e) {
      throw NumericError(tag + e.what());
    }
  };

  if (method != SolveMethod::rgm) {
    run("relax", [&] {
      const auto t0 = std::chrono::steady_clock::now();
      const RelaxProgram prog = build_relaxation(prob);
      o.relax = solve_barrier(prog, spec.barrier);
      o.recovered = recover_feasible(prog, *o.relax);
      o.exactness = check_exactness(prog);
      BoundsReport b;
      b.lower = o.relax->value;
      b.upper_recovered = o.recovered->value;
      b.exact = o.exactness->verdict == ExactnessVerdict::exact;
      b.relax_seconds = seconds_since(t0);
      o.bounds = b;
    });
  }
  if (method != SolveMethod::relax) {
    run("rgm", [&] {
      const auto t0 = std::chrono::steady_clock::now();
      Eigen::VectorXd start;
      if (method == SolveMethod::both) {
        start = prob.feasible().project(o.recovered->s);
      } else if (rgm_start != nullptr) {
        start = prob.feasible().project(*rgm_start);
      }
      o.rgm = solve_rgm(prob, start, spec.rgm);
      o.rgm_seconds = seconds_since(t0);
      if (o.bounds) {
        o.bounds->upper_rgm = o.rgm->value;
        o.bounds->rgm_seconds = o.rgm_seconds;
      }
    });
  }
  if (o.bounds) {
    BoundsReport& b = *o.bounds;
    b.finalize();
    const double tol = spec.sandwich_tolerance * std::max(1.0, std::abs(b.lower));
    std::ostringstream why;
    why << std::setprecision(17);
    if (b.lower > b.upper_recovered + tol) {
      why << "lower bound " << b.lower << " exceeds the recovered value " << b.upper_recovered;
    } else if (b.upper_rgm && b.lower > *b.upper_rgm + tol) {
      why << "lower bound " << b.lower << " exceeds the RGM value " << *b.upper_rgm;
    }
    if (!why.str().empty()) throw ValidationError("sandwich at eps=" + eps_label(o.epsilon) + ": " + why.str());
  }
  return o;
}

json to_json(const SolveOutcome& o) {
  json j{{"epsilon", o.epsilon}, {"method", to_string(o.method)}};
  j["bounds"] = o.bounds ? to_json(*o.bounds) : json(nullptr);
  if (o.exactness) {
    const auto& ex = *o.exactness;
    j["exactness"] = {{"verdict", to_string(ex.verdict)},
                      {"reason", ex.reason},
                      {"min_margin", ex.margins.size() ? json(-ex.margins.maxCoeff()) : json(nullptr)},
                      {"margins", to_array(ex.margins)}};
  }
  if (o.relax) {
    const auto& r = *o.relax;
    j["relax"] = {{"value", r.value},
                  {"mu", r.mu},
                  {"duality_gap", r.duality_gap},
                  {"equality_residual", r.equality_residual},
                  {"stages", r.stages},
                  {"newton_iterations", r.newton_iterations},
                  {"cap_active", r.cap_active},
                  {"d_plus", to_array(r.d)},
                  {"p_plus", to_array(r.p)},
                  {"y", to_array(r.y)},
                  {"t", to_array(r.t)},
                  {"sigma", to_array(r.sigma)}};
  }
  if (o.recovered) {
    const auto& r = *o.recovered;
    j["recovered"] = {{"value", r.value},
                      {"ep_residual", r.ep_residual},
                      {"formula_discrepancy", r.formula_discrepancy},
                      {"in_domain", r.in_domain},
                      {"clipped_nodes", r.clipped_nodes},
                      {"d", to_array(r.d)},
                      {"p", to_array(r.p)},
                      {"s", to_array(r.s)}};
  }
  if (o.rgm) {
    const auto& r = *o.rgm;
    j["rgm"] = {{"value", r.value},
                {"status", to_string(r.status)},
                {"iterations", r.log.empty() ? 0 : r.log.back().iter},
                {"grad_norm", r.grad_norm},
                {"start", o.method == SolveMethod::both ? "recovered" : "given_or_zero"},
                {"seconds", o.rgm_seconds},
                {"s", to_array(r.s)},
                {"p_bar", to_array(r.p_bar)}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Commands

json cmd_gen(const ExperimentConfig& c, const fs::path& out_dir) {
  GeneratedNetwork net = generate_network(c);
  json doc = graph_to_json(net.graph);
  doc["provenance"] = net.provenance;
  doc["provenance"]["config"] = to_json(c);
  prepare_dir(out_dir);
  write_text(out_dir / "network.json", doc.dump(1) + "\n");
  return doc;
}

json cmd_solve(const ExperimentConfig& c, SolveMethod method, const fs::path& out_dir) {
  c.validate();
  if (!(c.epsilon > 0)) throw InputError("solve requires epsilon > 0");
  const DependenceGraph g = load_network(c);
  const InvestmentProblem prob = make_problem(c, g, c.epsilon);
  const SolveOutcome o = solve_instance(prob, method, c.solver);
  json doc = document_header(c, "solve");
  doc["n"] = g.size();
  doc["perturbation_targets"] = prob.perturbation().mode == PerturbationMode::uniform
                                    ? json(g.size())
                                    : json(prob.perturbation().targets.size());
  doc["result"] = to_json(o);
  prepare_dir(out_dir);
  write_text(out_dir / "solve_report.json", doc.dump(1) + "\n");
  if (o.rgm) {
    std::ostringstream log;
    write_iterate_log_csv(log, o.rgm->log);
    write_text(out_dir / "rgm_log.csv", log.str());
  }
  return doc;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  const auto flags = os.flags();
  const auto precision = os.precision();
  os << std::setprecision(17);
  os << "epsilon,lower/N,upper_recovered/N,upper_rgm/N,gap_rel\n";
  for (const auto& r : rows) {
    const double scale = r.n > 0 ? 1.0 / static_cast<double>(r.n) : 1.0;
    const auto field = [&](const std::optional<double>& v, double f) {
      os << ',';
      if (v) os << *v * f;
    };
    os << r.epsilon;
    field(r.lower, scale);
    field(r.upper_recovered, scale);
    field(r.upper_rgm, scale);
    field(r.gap_rel, 1.0);
    os << '\n';
  }
  os.flags(flags);
  os.precision(precision);
}

SweepOutput cmd_sweep(const ExperimentConfig& c, SolveMethod method, const fs::path& out_dir, bool parallel) {
  c.validate();
  const DependenceGraph g = load_network(c);
  const InvestmentProblem base = make_problem(c, g, c.eps_grid.front());
  const InvestmentProblem unperturbed = base.with_epsilon(0.0);
  const std::size_t count = c.eps_grid.size();

  std::vector<std::optional<SolveOutcome>> outcomes(count);
  std::vector<std::optional<double>> deviation(count);
  std::vector<std::string> errors(count);
  std::vector<const char*> kinds(count, nullptr);

  const auto solve_point = [&](std::size_t k, const Eigen::VectorXd* start) {
    try {
      const InvestmentProblem prob = base.with_epsilon(c.eps_grid[k]);
      SolveOutcome o = solve_instance(prob, method, c.solver, start);
      const Eigen::VectorXd& s = o.best_s();
      const Eigen::VectorXd p_eps = o.rgm ? o.rgm->p_bar : evaluate(prob, s).p_bar;
      deviation[k] = (p_eps - evaluate(unperturbed, s, &p_eps).p_bar).cwiseAbs().maxCoeff();
      outcomes[k] = std::move(o);
    } catch (const std::exception& e) {
      errors[k] = e.what();
      kinds[k] = error_kind(std::current_exception());
    }
  };

  if (parallel) {
    std::atomic<std::size_t> next{0};
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(count, std::thread::hardware_concurrency()));
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < count; k = next++) solve_point(k, nullptr);
      });
    }
    for (auto& t : pool) t.join();
  } else {
    const Eigen::VectorXd* warm = nullptr;
    for (std::size_t k = 0; k < count; ++k) {
      solve_point(k, warm);
      if (outcomes[k] && outcomes[k]->rgm) warm = &outcomes[k]->rgm->s;
    }
  }

  SweepOutput out;
  out.report = document_header(c, "sweep");
  out.report["n"] = g.size();
  out.report["method"] = to_string(method);
  out.report["parallel"] = parallel;
  json points = json::array();
  std::vector<PerturbationRow> prow;
  std::size_t failed = 0;
  for (std::size_t k = 0; k < count; ++k) {
    SweepRow row;
    row.epsilon = c.eps_grid[k];
    row.n = g.size();
    PerturbationRow pr;
    pr.epsilon = row.epsilon;
    json point;
    if (outcomes[k]) {
      const SolveOutcome& o = *outcomes[k];
      if (o.bounds) {
        row.lower = pr.f_lower = o.bounds->lower;
        row.upper_recovered = pr.f_upper_recovered = o.bounds->upper_recovered;
        row.gap_rel = o.bounds->gap_rel;
      }
      if (o.rgm) row.upper_rgm = pr.f_rgm = o.rgm->value;
      row.max_p_deviation = pr.max_p_deviation = deviation[k];
      point = to_json(o);
      point["status"] = "ok";
      point["max_p_deviation"] = *deviation[k];
    } else {
      ++failed;
      row.error = errors[k];
      point = {{"epsilon", row.epsilon}, {"status", "failed"}, {"error", errors[k]}, {"error_kind", kinds[k]}};
    }
    points.push_back(std::move(point));
    out.rows.push_back(row);
    prow.push_back(pr);
  }
  out.report["failed_points"] = failed;
  out.report["points"] = std::move(points);

  prepare_dir(out_dir);
  std::ostringstream bounds_csv, pert_csv;
  write_sweep_csv(bounds_csv, out.rows);
  write_perturbation_csv(pert_csv, prow);
  write_text(out_dir / "sweep.csv", bounds_csv.str());
  write_text(out_dir / "perturbation.csv", pert_csv.str());
  write_text(out_dir / "sweep.json", out.report.dump(1) + "\n");
  return out;
}

json cmd_equilibrium(const ExperimentConfig& c, const Eigen::VectorXd& s_in, bool ode_check, const fs::path& out_dir) {
  c.validate();
  const DependenceGraph g = load_network(c);
  const auto n = static_cast<Eigen::Index>(g.size());
  const Eigen::VectorXd s = s_in.size() == 0 ? Eigen::VectorXd::Zero(n) : s_in;
  if (s.size() != n) {
    throw InputError("investment has " + std::to_string(s.size()) + " entries, network has " + std::to_string(n) +
                     " nodes");
  }
  if ((s.array() < 0).any() || !s.allFinite()) throw InputError("investment entries must be finite and >= 0");
  const Condensation cond = condense(g);
  const PerturbationScheme pert = make_perturbation(c, g, c.epsilon);
  pert.validate(g, cond);
  const Eigen::VectorXd lambda_eff = pert.apply(g);
  const Equilibrium eq = stable_equilibrium(g, cond, s, lambda_eff);

  const Eigen::SparseMatrix<double> jac = equilibrium_jacobian(g, eq.p_bar, s, lambda_eff);
  const Eigen::SparseMatrix<double> m = -jac;
  const MMatrixCheck mcheck = is_nonsingular_m_matrix(m);
  constexpr Eigen::Index kDenseConditionLimit = 3000;

  json doc = document_header(c, "equilibrium");
  doc["n"] = g.size();
  doc["epsilon"] = c.epsilon;
  doc["perturbation"] = to_string(c.perturbation);
  doc["p_bar"] = to_array(eq.p_bar);
  doc["effective_lambda"] = to_array(eq.effective_lambda);
  doc["residual_inf"] = eq.residual_inf;
  doc["jacobian_condition"] = n <= kDenseConditionLimit ? json(jacobian_condition(jac)) : json(nullptr);
  doc["m_matrix"] = {{"nonsingular", mcheck.nonsingular_m_matrix}, {"reason", mcheck.reason}};

  std::ostringstream table;
  table << std::setprecision(17) << "mscc,size,level,exposed,regime,spectral_radius,p_min,p_max\n";
  json regimes = json::array();
  for (std::size_t k = 0; k < cond.size(); ++k) {
    double lo = 1.0, hi = 0.0;
    for (NodeId i : cond.msccs[k]) {
      lo = std::min(lo, eq.p_bar[static_cast<Eigen::Index>(i)]);
      hi = std::max(hi, eq.p_bar[static_cast<Eigen::Index>(i)]);
    }
    regimes.push_back({{"mscc", k},
                       {"size", cond.msccs[k].size()},
                       {"level", cond.level[k]},
                       {"exposed", static_cast<bool>(cond.exposed[k])},
                       {"regime", to_string(eq.regime[k])},
                       {"spectral_radius", eq.spectral_radius[k]},
                       {"p_min", lo},
                       {"p_max", hi}});
    table << k << ',' << cond.msccs[k].size() << ',' << cond.level[k] << ',' << (cond.exposed[k] ? 1 : 0) << ','
          << to_string(eq.regime[k]) << ',' << eq.spectral_radius[k] << ',' << lo << ',' << hi << '\n';
  }
  doc["regimes"] = std::move(regimes);

  std::optional<double> ode_gap;
  if (ode_check) {
    const OdeResult r = integrate_ode(g, Eigen::VectorXd::Ones(n), s, lambda_eff, c.solver.ode_horizon);
    ode_gap = (r.terminal - eq.p_bar).cwiseAbs().maxCoeff();
    doc["ode_check"] = {{"horizon", c.solver.ode_horizon},
                        {"max_abs_diff", *ode_gap},
                        {"tail_drift", r.max_drift_tail},
                        {"steps", r.steps},
                        {"passed", *ode_gap <= c.solver.ode_tolerance}};
  }

  prepare_dir(out_dir);
  write_text(out_dir / "equilibrium.json", doc.dump(1) + "\n");
  write_text(out_dir / "regimes.csv", table.str());
  if (ode_gap && *ode_gap > c.solver.ode_tolerance) {
    std::ostringstream os;
    os << "ODE terminal state differs from the equilibrium by " << *ode_gap << " > " << c.solver.ode_tolerance;
    throw ValidationError(os.str());
  }
  return doc;
}

Eigen::VectorXd read_investment(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open investment file " + path.string());
  try {
    json j;
    is >> j;
    const json& arr = j.is_object() ? j.at("s") : j;
    const auto v = arr.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  } catch (const json::exception& e) {
    throw InputError("investment file " + path.string() + ": " + e.what());
  }
}

}  // namespace sisinvest
