#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sisinvest/errors.hpp"
#include "sisinvest/experiment.hpp"

namespace {

using namespace sisinvest;

struct CommonOptions {
  std::string config_path;
  std::string preset = "two_block";
  std::string network_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> nu;
  std::optional<double> epsilon;
  std::string out_dir = "out";
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "experiment config JSON; absent keys take the preset's values");
  cmd->add_option("--preset", o.preset, "base configuration")->check(CLI::IsMember({"two_block", "oriented"}));
  cmd->add_option("--network", o.network_path, "network JSON file instead of the generator");
  cmd->add_option("--seed", o.seed, "master seed: generator, attack and c_rand seeds become seed, seed+1, seed+2");
  cmd->add_option("--nu", o.nu, "cost scale nu in c = (nu 1 + w c_rand) o B^T 1 (generated networks only)");
  cmd->add_option("--out-dir", o.out_dir, "output directory");
}

ExperimentConfig build_config(const CommonOptions& o) {
  ExperimentConfig c = o.preset == "oriented" ? ExperimentConfig::oriented() : ExperimentConfig::two_block();
  if (!o.config_path.empty()) {
    std::ifstream is(o.config_path, std::ios::binary);
    if (!is) throw InputError("cannot open config file " + o.config_path);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw InputError("config file " + o.config_path + ": " + e.what());
    }
    // Overlay the file onto the preset so partial configs work.
    nlohmann::json merged = to_json(c);
    merged.merge_patch(j);
    c = config_from_json(merged);
  }
  if (!o.network_path.empty()) c.network_path = o.network_path;
  if (o.seed) c.reseed(*o.seed);
  if (o.nu) {
    if (c.network_path) throw InputError("--nu applies to generated networks; the network file fixes c");
    c.cost.nu = *o.nu;
  }
  if (o.epsilon) c.epsilon = *o.epsilon;
  c.validate();
  return c;
}

std::vector<double> parse_eps_grid(const std::string& text) {
  // "hi:lo:count" is a log-spaced grid, anything else a comma-separated list.
  const auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw InputError("--eps-grid: cannot parse '" + s + "'");
    return v;
  };
  std::vector<std::string> parts;
  const char sep = text.find(':') != std::string::npos ? ':' : ',';
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, sep);) parts.push_back(item);
  if (sep == ':') {
    if (parts.size() != 3) throw InputError("--eps-grid: expected hi:lo:count");
    const double count = number(parts[2]);
    if (!(count >= 1 && count == std::floor(count))) throw InputError("--eps-grid: count must be a positive integer");
    return log_grid(number(parts[0]), number(parts[1]), static_cast<std::size_t>(count));
  }
  std::vector<double> grid;
  for (const auto& p : parts) grid.push_back(number(p));
  return grid;
}

void print_bounds(const nlohmann::json& result) {
  const auto& b = result.at("bounds");
  std::cout << std::setprecision(10);
  if (!b.is_null()) {
    std::cout << "lower            " << b.at("lower").get<double>() << "\n"
              << "upper_recovered  " << b.at("upper_recovered").get<double>() << "\n";
    if (!b.at("upper_rgm").is_null()) std::cout << "upper_rgm        " << b.at("upper_rgm").get<double>() << "\n";
    std::cout << "gap_rel          " << b.at("gap_rel").get<double>() << "\n"
              << "exact            " << (b.at("exact").get<bool>() ? "true" : "false") << "\n";
  } else if (result.contains("rgm")) {
    std::cout << "rgm value        " << result.at("rgm").at("value").get<double>() << " ("
              << result.at("rgm").at("status").get<std::string>() << ")\n";
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Security investment on weakly connected SIS dependence graphs"};
  app.require_subcommand(1);

  CommonOptions gen_o, solve_o, sweep_o, eq_o;
  std::string solve_method = "both", sweep_method = "both", eps_grid, s_file;
  bool parallel = false, ode_check = false;

  auto* gen = app.add_subcommand("gen", "generate a network JSON with provenance");
  add_common(gen, gen_o);

  auto* solve = app.add_subcommand("solve", "solve one perturbed problem");
  add_common(solve, solve_o);
  solve->add_option("--method", solve_method, "rgm, relax or both")->check(CLI::IsMember({"rgm", "relax", "both"}));
  solve->add_option("--epsilon", solve_o.epsilon, "perturbation size, > 0");

  auto* sweep = app.add_subcommand("sweep", "bounds over a descending epsilon grid");
  add_common(sweep, sweep_o);
  sweep->add_option("--method", sweep_method, "rgm, relax or both")->check(CLI::IsMember({"rgm", "relax", "both"}));
  sweep->add_option("--eps-grid", eps_grid, "comma-separated descending list or hi:lo:count");
  sweep->add_flag("--parallel", parallel, "solve grid points independently in parallel (no warm starts)");

  auto* eq = app.add_subcommand("equilibrium", "stable equilibrium and regime table");
  add_common(eq, eq_o);
  eq->add_option("--epsilon", eq_o.epsilon, "perturbation size, >= 0");
  eq->add_option("--s", s_file, "investment JSON (array or {\"s\": [...]}); zeros if absent");
  eq->add_flag("--ode-check", ode_check, "cross-check against the ODE terminal state");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (gen->parsed()) {
    const ExperimentConfig c = build_config(gen_o);
    const auto doc = cmd_gen(c, gen_o.out_dir);
    const auto& p = doc.at("provenance");
    std::cout << "network " << (std::filesystem::path(gen_o.out_dir) / "network.json").string() << ": "
              << p.at("nodes") << " nodes, " << p.at("edges") << " edges, " << p.at("msccs") << " MSCCs, hash "
              << p.at("config_hash").get<std::string>() << "\n";
  } else if (solve->parsed()) {
    const ExperimentConfig c = build_config(solve_o);
    const auto doc = cmd_solve(c, solve_method_from_string(solve_method), solve_o.out_dir);
    std::cout << "solve eps=" << c.epsilon << " method=" << solve_method << " hash "
              << doc.at("config_hash").get<std::string>() << "\n";
    print_bounds(doc.at("result"));
  } else if (sweep->parsed()) {
    ExperimentConfig c = build_config(sweep_o);
    if (!eps_grid.empty()) {
      c.eps_grid = parse_eps_grid(eps_grid);
      c.validate();
    }
    const auto out = cmd_sweep(c, solve_method_from_string(sweep_method), sweep_o.out_dir, parallel);
    std::cout << "sweep over " << c.eps_grid.size() << " points, hash " << out.report.at("config_hash").get<std::string>()
              << "\n";
    write_sweep_csv(std::cout, out.rows);
    bool validation = false, numeric = false;
    for (const auto& pt : out.report.at("points")) {
      if (pt.at("status") == "ok") continue;
      std::cerr << "eps=" << pt.at("epsilon").get<double>() << " failed: " << pt.at("error").get<std::string>() << "\n";
      const auto kind = pt.at("error_kind").get<std::string>();
      validation |= kind == "validation";
      numeric |= kind != "validation";
    }
    if (validation) return 4;
    if (numeric) return 3;
  } else if (eq->parsed()) {
    const ExperimentConfig c = build_config(eq_o);
    const Eigen::VectorXd s = s_file.empty() ? Eigen::VectorXd() : read_investment(s_file);
    const auto doc = cmd_equilibrium(c, s, ode_check, eq_o.out_dir);
    std::cout << std::setprecision(10) << "equilibrium eps=" << c.epsilon << " residual "
              << doc.at("residual_inf").get<double>() << "\n";
    for (const auto& r : doc.at("regimes")) {
      std::cout << "  mscc " << r.at("mscc") << " size " << r.at("size") << " level " << r.at("level")
                << (r.at("exposed").get<bool>() ? " exposed    " : " accessible ") << r.at("regime").get<std::string>()
                << " p in [" << r.at("p_min").get<double>() << ", " << r.at("p_max").get<double>() << "]\n";
    }
    if (doc.contains("ode_check")) {
      std::cout << "  ode max |diff| " << doc.at("ode_check").at("max_abs_diff").get<double>() << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "validation failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
