// Command-line front end: simulate | tune | estimate | diagnose.
// All outputs are machine-readable (CSV/JSON/SVG), written atomically, and
// embed the effective configuration and seed.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "bao/comparators.hpp"
#include "bao/estimate.hpp"
#include "bao/panel.hpp"
#include "bao/simlab.hpp"
#include "bao/tune.hpp"

namespace {

using nlohmann::json;

void atomic_write(const std::string& path, const std::string& payload) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    out << payload;
  }
  std::filesystem::rename(tmp, path);
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw bao::ParseError("cannot open config '" + path + "'");
  json j;
  in >> j;
  return j;
}

std::uint64_t resolve_seed(std::uint64_t flag_seed, bool seed_given) {
  if (seed_given) return flag_seed;
  if (const char* env = std::getenv("BAO_SEED")) {
    return static_cast<std::uint64_t>(std::strtoull(env, nullptr, 10));
  }
  return flag_seed;
}

struct CommonConfig {
  bao::BalanceSpec spec;
  bool have_spec = false;
  bao::SolverOptions solver;
  bao::TuningConfig tuning;
  int bootstrap = 100;
  bao::ColumnMapping columns;
  json echo = json::object();
};

CommonConfig read_config_file(const std::string& path) {
  CommonConfig cfg;
  if (path.empty()) return cfg;
  json j = load_json(path);
  cfg.echo = j;
  if (j.contains("transforms")) {
    cfg.spec = bao::balance_spec_from_json(j);
    cfg.have_spec = true;
  }
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    cfg.solver.tol = s.value("tol", cfg.solver.tol);
    cfg.solver.max_iter_factor =
        s.value("max_iter_factor", cfg.solver.max_iter_factor);
    cfg.solver.infeas_tol = s.value("infeas_tol", cfg.solver.infeas_tol);
    if (s.contains("ladder"))
      cfg.solver.ladder = s.at("ladder").get<std::vector<double>>();
  }
  if (j.contains("tuning")) {
    const auto& t = j.at("tuning");
    if (t.contains("candidates"))
      cfg.tuning.candidates = t.at("candidates").get<std::vector<double>>();
    cfg.tuning.resamples = t.value("resamples", cfg.tuning.resamples);
  }
  cfg.bootstrap = j.value("bootstrap", cfg.bootstrap);
  if (j.contains("columns")) {
    const auto& c = j.at("columns");
    cfg.columns.id = c.value("id", cfg.columns.id);
    cfg.columns.y = c.value("y", cfg.columns.y);
    if (c.contains("z")) cfg.columns.z = c.at("z").get<std::vector<std::string>>();
    if (c.contains("c")) cfg.columns.c = c.at("c").get<std::vector<std::string>>();
    if (c.contains("x"))
      cfg.columns.x = c.at("x").get<std::vector<std::vector<std::string>>>();
  }
  return cfg;
}

bao::PanelDataset load_data(const std::string& path,
                            const bao::ColumnMapping& columns) {
  if (!std::filesystem::exists(path))
    throw bao::ValidationError("data file not found: " + path);
  std::ifstream in(path);
  return bao::load_panel(in, columns);
}

json effective_config(const json& base, std::uint64_t seed,
                      const json& extra) {
  json j = base;
  j["seed"] = seed;
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = *it;
  return j;
}

std::string csv_with_footer(const std::string& body, const json& config) {
  return body + "# config=" + config.dump() + "\n";
}

int run_simulate(int study, int n, int reps, std::uint64_t seed,
                 const std::string& methods_csv, const std::string& out_path,
                 const std::string& svg_path, const CommonConfig& cfg,
                 long oracle_draws, unsigned threads) {
  bao::StudyConfig sc;
  sc.study = study;
  sc.n = n;
  sc.replicates = reps;
  sc.seed = seed;
  sc.methods.clear();
  std::stringstream ss(methods_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) sc.methods.push_back(tok);
  sc.method.bootstrap = cfg.bootstrap;
  sc.method.tuning = cfg.tuning;
  sc.method.solver = cfg.solver;
  sc.oracle_draws = oracle_draws;
  sc.threads = threads;

  bao::ReplicationReport report = bao::run_replications(sc);

  json config{{"study", study},        {"n", n},
              {"reps", reps},          {"methods", sc.methods},
              {"bootstrap", cfg.bootstrap}, {"oracle_draws", oracle_draws},
              {"tuning", {{"candidates", cfg.tuning.candidates},
                          {"resamples", cfg.tuning.resamples}}}};
  std::ostringstream body;
  bao::write_report_csv(report, body);
  atomic_write(out_path,
               csv_with_footer(body.str(), effective_config(config, seed, {})));
  if (!svg_path.empty()) {
    std::ostringstream svg;
    bao::write_asmd_cv_svg(report, svg);
    std::string path = svg_path;
    if (std::filesystem::is_directory(svg_path) ||
        svg_path.back() == '/') {
      std::filesystem::create_directories(svg_path);
      path = (std::filesystem::path(svg_path) /
              ("asmd_cv_study" + std::to_string(study) + "_n" +
               std::to_string(n) + ".svg"))
                 .string();
    }
    atomic_write(path, svg.str());
  }
  return 0;
}

int run_tune(const std::string& data_path, const CommonConfig& cfg,
             std::uint64_t seed, const std::string& out_path,
             unsigned threads) {
  bao::PanelDataset data = load_data(data_path, cfg.columns);
  bao::BalanceSpec spec =
      cfg.have_spec ? cfg.spec : bao::BalanceSpec::identity(data);
  bao::TuningReport report = bao::tune_delta(
      data, spec, cfg.tuning, seed, cfg.solver, threads);
  json j = bao::to_json(report);
  j["config"] = effective_config(cfg.echo, seed,
                                 json{{"data", data_path}});
  atomic_write(out_path, j.dump(2) + "\n");
  return report.ok ? 0 : 2;
}

int run_estimate(const std::string& data_path, const CommonConfig& cfg,
                 const std::string& msm_name, const std::string& method,
                 int bootstrap, std::uint64_t seed,
                 const std::string& out_path, unsigned threads) {
  bao::PanelDataset data = load_data(data_path, cfg.columns);
  bao::MsmDesign design = bao::MsmDesign::named(msm_name, data.T);
  json config = effective_config(
      cfg.echo, seed,
      json{{"data", data_path}, {"msm", msm_name}, {"method", method},
           {"bootstrap", bootstrap}});

  json out;
  if (method == "bao") {
    bao::BaoConfig bc;
    bc.tuning = cfg.tuning;
    bc.bootstrap = bootstrap;
    bc.seed = seed;
    bc.solver = cfg.solver;
    bc.threads = threads;
    bao::BalanceSpec spec =
        cfg.have_spec ? cfg.spec : bao::BalanceSpec::identity(data);
    bao::BaoResult result = data.censoring
                                ? bao::run_bao_censored(data, spec, design, bc)
                                : bao::run_bao(data, spec, design, bc);
    out = bao::to_json(result);
  } else {
    auto registry = bao::default_estimators();
    auto it = registry.find(method);
    if (it == registry.end())
      throw bao::SpecError("unknown method '" + method + "'");
    bao::MethodConfig mc;
    mc.bootstrap = bootstrap;
    mc.tuning = cfg.tuning;
    mc.solver = cfg.solver;
    mc.threads = threads;
    bao::MethodOutcome outcome =
        it->second(data, design, mc, bao::RngStream(seed).child(method));
    if (!outcome.ok) throw bao::FitError(outcome.error);
    json coef = json::object();
    const auto names = design.labels();
    for (int j = 0; j < outcome.coef.size(); ++j)
      coef[names[j]] = {{"estimate", outcome.coef(j)},
                        {"ci_lower", outcome.ci_lo(j)},
                        {"ci_upper", outcome.ci_hi(j)}};
    out = json{{"method", method}, {"coefficients", coef}};
  }
  out["config"] = config;
  atomic_write(out_path, out.dump(2) + "\n");
  return 0;
}

int run_diagnose(const std::string& data_path, const CommonConfig& cfg,
                 double delta, const std::string& out_prefix,
                 unsigned threads) {
  bao::PanelDataset data = load_data(data_path, cfg.columns);
  bao::BalanceSpec spec =
      cfg.have_spec ? cfg.spec : bao::BalanceSpec::identity(data);
  bool has_delta = false;
  for (const auto& d : spec.delta_std)
    if (d.size() > 0) has_delta = true;
  if (delta >= 0) {
    spec = spec.with_delta(delta);
    has_delta = true;
  }
  if (!has_delta)
    throw bao::SpecError(
        "diagnose needs a tolerance: set delta_std in the config or pass "
        "--delta");
  bao::BalanceState state = bao::build_balance_state(data, spec);
  std::vector<bao::WeightSolution> sols;
  std::vector<Eigen::VectorXd> tols;
  json weight_summaries = json::array();
  std::ostringstream weights_csv;
  weights_csv << "id,path,weight\n";
  for (std::size_t i = 0; i < state.problems.size(); ++i) {
    bao::RelaxResult rr =
        bao::relax_to_feasible(state.problems[i], cfg.solver.ladder, cfg.solver);
    tols.push_back(state.problems[i].delta *
                   (rr.feasible ? rr.multiplier : 1.0));
    json js{{"path", state.paths[i].label()},
            {"count", static_cast<int>(state.problems[i].members.size())},
            {"status", bao::to_string(rr.solution.status)}};
    if (rr.feasible) {
      js["ladder_multiplier"] = rr.multiplier;
      js["ess"] = rr.solution.ess;
      js["cv"] = rr.solution.cv;
      js["max_weight"] = rr.solution.max_weight;
      js["objective"] = rr.solution.objective;
      js["kkt_max"] = rr.solution.kkt.max();
      for (std::size_t j = 0; j < state.problems[i].members.size(); ++j)
        weights_csv << data.ids[state.problems[i].members[j]] << ","
                    << state.paths[i].label() << ","
                    << bao::format_double(
                           rr.solution.weights(static_cast<int>(j)))
                    << "\n";
    } else if (rr.solution.most_violated >= 0) {
      js["most_violated"] =
          state.problems[i].row_labels[rr.solution.most_violated];
    }
    weight_summaries.push_back(std::move(js));
    sols.push_back(std::move(rr.solution));
  }
  bao::BalanceTable table = bao::residual_balance_table(state, sols, tols);

  json config = effective_config(cfg.echo, 0, json{{"data", data_path}});
  if (delta >= 0) config["delta"] = delta;
  std::ostringstream balance;
  bao::write_balance_csv(table, balance);
  atomic_write(out_prefix + ".balance.csv",
               csv_with_footer(balance.str(), config));
  json wj{{"paths", weight_summaries}, {"config", config}};
  atomic_write(out_prefix + ".weights.json", wj.dump(2) + "\n");
  atomic_write(out_prefix + ".weights.csv",
               csv_with_footer(weights_csv.str(), config));
  std::ostringstream residuals;
  bao::export_residuals(state.residuals, data.ids, residuals);
  atomic_write(out_prefix + ".residuals.csv",
               csv_with_footer(residuals.str(), config));
  bool any_infeasible = false;
  for (const auto& s : sols)
    any_infeasible |= s.status != bao::SolveStatus::Optimal;
  return any_infeasible ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Balancing weights for time-varying treatments"};
  app.require_subcommand(1);

  unsigned threads = bao::default_threads();
  app.add_option("--threads", threads, "Worker thread cap")->capture_default_str();

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run a Monte Carlo study");
  int study = 1, n = 500, reps = 10;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string methods = "bao";
  std::string out_path = "report.csv";
  std::string svg_path;
  std::string config_path;
  long oracle_draws = 10000000;
  int bootstrap_flag = -1;
  sim->add_option("--study", study, "Study 1, 2, or 3")->required();
  sim->add_option("--n", n, "Units per replicate")->required();
  sim->add_option("--reps", reps, "Replicate count")->required();
  auto* seed_opt = sim->add_option("--seed", seed, "RNG seed");
  sim->add_option("--methods", methods, "Comma list: bao,gpool,gstrat,lr,lr-stab,lr-trunc,unadj");
  sim->add_option("--out", out_path, "Report CSV path")->required();
  sim->add_option("--svg", svg_path, "Optional SVG path or directory");
  sim->add_option("--config", config_path, "JSON config file");
  sim->add_option("--bootstrap", bootstrap_flag, "Bootstrap resamples per fit");
  sim->add_option("--oracle-draws", oracle_draws, "Truth oracle draws");

  // tune
  auto* tune = app.add_subcommand("tune", "Select the balance tolerance");
  std::string data_path;
  tune->add_option("--data", data_path, "Panel CSV")->required();
  tune->add_option("--config", config_path, "JSON config file");
  auto* tune_seed = tune->add_option("--seed", seed, "RNG seed");
  tune->add_option("--out", out_path, "Report JSON path")->required();
  std::string candidates_csv;
  int resamples_flag = -1;
  tune->add_option("--candidates", candidates_csv, "Comma list of deltas");
  tune->add_option("--resamples", resamples_flag, "Bootstrap resamples");

  // estimate
  auto* est = app.add_subcommand("estimate", "Estimate MSM parameters");
  std::string msm_name = "additive";
  std::string method = "bao";
  est->add_option("--data", data_path, "Panel CSV")->required();
  est->add_option("--config", config_path, "JSON config file");
  est->add_option("--msm", msm_name,
                  "additive|cumulative|switch|saturated");
  est->add_option("--method", method,
                  "bao|gpool|gstrat|lr|lr-stab|lr-trunc|unadj");
  est->add_option("--bootstrap", bootstrap_flag, "Bootstrap resamples");
  auto* est_seed = est->add_option("--seed", seed, "RNG seed");
  est->add_option("--out", out_path, "Result JSON path")->required();

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "Balance and weight diagnostics");
  double delta_flag = -1.0;
  std::string out_prefix = "diagnosis";
  diag->add_option("--data", data_path, "Panel CSV")->required();
  diag->add_option("--config", config_path, "JSON config file");
  diag->add_option("--delta", delta_flag, "Standardized tolerance override");
  diag->add_option("--out", out_prefix, "Output path prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    CommonConfig cfg = read_config_file(config_path);
    if (bootstrap_flag >= 0) cfg.bootstrap = bootstrap_flag;
    if (resamples_flag >= 0) cfg.tuning.resamples = resamples_flag;
    if (!candidates_csv.empty()) {
      cfg.tuning.candidates.clear();
      std::stringstream ss(candidates_csv);
      std::string tok;
      while (std::getline(ss, tok, ','))
        cfg.tuning.candidates.push_back(std::stod(tok));
    }
    seed_given = seed_opt->count() > 0 || tune_seed->count() > 0 ||
                 est_seed->count() > 0;
    const std::uint64_t effective_seed = resolve_seed(seed, seed_given);

    if (sim->parsed())
      return run_simulate(study, n, reps, effective_seed, methods, out_path,
                          svg_path, cfg, oracle_draws, threads);
    if (tune->parsed())
      return run_tune(data_path, cfg, effective_seed, out_path, threads);
    if (est->parsed())
      return run_estimate(data_path, cfg, msm_name, method, cfg.bootstrap,
                          effective_seed, out_path, threads);
    if (diag->parsed())
      return run_diagnose(data_path, cfg, delta_flag, out_prefix, threads);
  } catch (const bao::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const bao::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const bao::SpecError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const bao::TuningError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const bao::FitError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
