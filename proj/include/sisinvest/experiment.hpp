#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "sisinvest/graph.hpp"
#include "sisinvest/perturb.hpp"
#include "sisinvest/problem.hpp"
#include "sisinvest/relax.hpp"
#include "sisinvest/rgm.hpp"

namespace sisinvest {

/// Synthetic network recipe.
///
/// two_block: one bidirectional scale-free MSCC per entry of `sizes`, block k
/// feeding block k + 1 through `cross_edges` one-way edges.
/// oriented: a single scale-free topology of size sizes[0] whose links each
/// get one uniformly random direction.
struct GeneratorSpec {
  enum class Kind { two_block, oriented };
  Kind kind = Kind::two_block;
  std::vector<std::size_t> sizes{50, 150};
  double power = 1.5;
  std::size_t min_degree = 2;
  std::size_t max_degree = 0;  ///< 0 selects default_max_degree(size) per block
  std::size_t cross_edges = 10;
  std::uint64_t seed = 1;
};

/// Which nodes receive the primary attack rate `value`.
struct AttackSpec {
  enum class Placement { last_block, anywhere };
  Placement placement = Placement::last_block;
  std::size_t count = 10;
  double value = 0.1;
  std::uint64_t seed = 2;
};

/// c = (nu 1 + c_rand_weight c_rand) o B^T 1 with c_rand uniform on (0, 1).
struct CostSpec {
  double nu = 1.1;
  double c_rand_weight = 0.2;
  std::uint64_t c_rand_seed = 3;
};

/// uniform: every node; accessible: nodes of unexposed MSCCs; unattacked:
/// nodes with lambda = 0.
enum class PerturbationTarget { uniform, accessible, unattacked };
const char* to_string(PerturbationTarget t);

struct SolverSpec {
  RgmSettings rgm;
  BarrierSettings barrier;
  double ode_horizon = 1e3;
  double ode_tolerance = 1e-6;
  double sandwich_tolerance = 1e-8;  ///< relative to max(1, |lower|)
};

struct ExperimentConfig {
  std::optional<std::string> network_path;  ///< overrides the generator when set
  GeneratorSpec generator;
  double delta = 0.1;
  std::pair<double, double> beta_range{0.01, 1.0};
  std::optional<double> kappa;  ///< unset means kappa = 1 / delta
  double breach_exp = 1.0;
  AttackSpec attack;
  CostSpec cost;
  FeasibleSet feasible;
  PerturbationTarget perturbation = PerturbationTarget::accessible;
  double epsilon = 1e-3;  ///< single-point solves
  std::vector<double> eps_grid = default_epsilon_grid();
  SolverSpec solver;

  /// Two MSCCs of 50 and 150 nodes, 10 attacked nodes in the second.
  static ExperimentConfig two_block(double nu = 1.1);
  /// 500-node oriented scale-free digraph, lambda = 0.01 on a random half,
  /// nu = 0.8 without random cost term, unattacked nodes perturbed.
  static ExperimentConfig oriented(std::size_t size = 500);

  /// Sets generator, attack and c_rand seeds to seed, seed + 1, seed + 2.
  void reseed(std::uint64_t seed);
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const nlohmann::json& j);

/// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

/// Seeds actually consumed when generating the network.
nlohmann::json seed_record(const ExperimentConfig& c);

struct GeneratedNetwork {
  DependenceGraph graph;
  nlohmann::json provenance;
};

/// Builds the configured synthetic network. Throws ValidationError when the
/// result is not weakly connected or its condensation misses the blocks.
GeneratedNetwork generate_network(const ExperimentConfig& c);

/// The configured network file, or the generated network.
DependenceGraph load_network(const ExperimentConfig& c);

PerturbationScheme make_perturbation(const ExperimentConfig& c, const DependenceGraph& g, double eps);
InvestmentProblem make_problem(const ExperimentConfig& c, const DependenceGraph& g, double eps);

enum class SolveMethod { rgm, relax, both };
const char* to_string(SolveMethod m);
SolveMethod solve_method_from_string(const std::string& s);

/// Everything computed for one epsilon.
struct SolveOutcome {
  double epsilon = 0.0;
  SolveMethod method = SolveMethod::both;
  std::optional<RelaxSolution> relax;
  std::optional<RecoveredPoint> recovered;
  std::optional<ExactnessCheck> exactness;
  std::optional<RgmResult> rgm;
  std::optional<BoundsReport> bounds;  ///< present whenever relax ran
  double rgm_seconds = 0.0;

  /// Best available investment: RGM if it ran, otherwise the recovered s'.
  const Eigen::VectorXd& best_s() const;
  double best_value() const;
};

/// Runs the selected methods. `both` starts RGM at the recovered s';
/// `rgm` alone starts at `rgm_start` when given, else at zero. Solver errors
/// are rethrown with the method and epsilon prefixed. Throws ValidationError
/// when the bounds fail to sandwich.
SolveOutcome solve_instance(const InvestmentProblem& prob, SolveMethod method, const SolverSpec& spec,
                            const Eigen::VectorXd* rgm_start = nullptr);

nlohmann::json to_json(const SolveOutcome& o);

// ---------------------------------------------------------------------------
// Commands. Each writes its files into out_dir (created if missing) and
// returns the main JSON document; every document carries the config, its
// hash and the seed record.

nlohmann::json cmd_gen(const ExperimentConfig& c, const std::filesystem::path& out_dir);

nlohmann::json cmd_solve(const ExperimentConfig& c, SolveMethod method, const std::filesystem::path& out_dir);

struct SweepRow {
  double epsilon = 0.0;
  std::size_t n = 0;
  std::optional<double> lower;
  std::optional<double> upper_recovered;
  std::optional<double> upper_rgm;
  std::optional<double> gap_rel;
  std::optional<double> max_p_deviation;
  std::optional<std::string> error;
};

/// Columns: epsilon,lower/N,upper_recovered/N,upper_rgm/N,gap_rel. Failed
/// points keep their epsilon with empty value fields.
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

struct SweepOutput {
  nlohmann::json report;
  std::vector<SweepRow> rows;
};

/// Solves every grid point. Sequential runs continue RGM from the previous
/// point's optimum (method rgm); `parallel` solves points independently on
/// all hardware threads. A failing point is recorded and skipped.
SweepOutput cmd_sweep(const ExperimentConfig& c, SolveMethod method, const std::filesystem::path& out_dir,
                      bool parallel = false);

/// Stable equilibrium at investment s (zero if empty) and c.epsilon, with a
/// per-MSCC regime table and, if requested, an ODE cross-check that throws
/// ValidationError beyond the configured tolerance.
nlohmann::json cmd_equilibrium(const ExperimentConfig& c, const Eigen::VectorXd& s, bool ode_check,
                               const std::filesystem::path& out_dir);

/// Investment vector from a JSON file: a bare array or an object with "s".
Eigen::VectorXd read_investment(const std::filesystem::path& path);

}  // namespace sisinvest
