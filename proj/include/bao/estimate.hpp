#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bao/parallel.hpp"
#include "bao/pipeline.hpp"
#include "bao/stats.hpp"
#include "bao/tune.hpp"

namespace bao {

// Post-weighting standardized imbalance above this level triggers a warning
// in the run report.
inline constexpr double kAsmdWarnThreshold = 0.2;

// Marginal structural model design over treatment paths, from a closed
// vocabulary so fits stay auditable.
struct MsmDesign {
  enum class Kind { Additive, Cumulative, Switch, Saturated };
  Kind kind = Kind::Additive;
  int T = 0;

  static MsmDesign named(const std::string& name, int T) {
    MsmDesign d;
    d.T = T;
    if (name == "additive") d.kind = Kind::Additive;
    else if (name == "cumulative") d.kind = Kind::Cumulative;
    else if (name == "switch") d.kind = Kind::Switch;
    else if (name == "saturated") d.kind = Kind::Saturated;
    else throw SpecError("unknown MSM design '" + name + "'");
    return d;
  }

  std::string name() const {
    switch (kind) {
      case Kind::Additive: return "additive";
      case Kind::Cumulative: return "cumulative";
      case Kind::Switch: return "switch";
      case Kind::Saturated: return "saturated";
    }
    return "";
  }

  int cols() const {
    switch (kind) {
      case Kind::Additive: return 1 + T;
      case Kind::Cumulative: return 2;
      case Kind::Switch: return 1 + T;
      case Kind::Saturated: return 1 << T;
    }
    return 0;
  }

  Eigen::RowVectorXd row(const TreatmentPath& path) const {
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(cols());
    switch (kind) {
      case Kind::Additive:
        r(0) = 1.0;
        for (int t = 1; t <= T; ++t) r(t) = path.bit(t);
        break;
      case Kind::Cumulative:
        r(0) = 1.0;
        r(1) = path.sum();
        break;
      case Kind::Switch:
        r(0) = 1.0;
        for (int t = 1; t <= T; ++t) {
          const int prev = t == 1 ? 0 : path.bit(t - 1);
          r(t) = path.bit(t) != prev ? 1.0 : 0.0;
        }
        break;
      case Kind::Saturated:
        r(static_cast<int>(path.code)) = 1.0;
        break;
    }
    return r;
  }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    switch (kind) {
      case Kind::Additive:
        out.push_back("intercept");
        for (int t = 1; t <= T; ++t) out.push_back("z" + std::to_string(t));
        break;
      case Kind::Cumulative:
        out = {"intercept", "cum_z"};
        break;
      case Kind::Switch:
        out.push_back("intercept");
        for (int t = 1; t <= T; ++t)
          out.push_back("switch" + std::to_string(t));
        break;
      case Kind::Saturated:
        for (std::uint32_t c = 0; c < (1u << T); ++c)
          out.push_back("path" + TreatmentPath{T, c}.label());
        break;
    }
    return out;
  }
};

struct MsmFit {
  std::vector<std::string> names;
  Eigen::VectorXd coef;
  Eigen::VectorXd se;      // bootstrap; NaN until filled
  Eigen::VectorXd ci_lo;   // percentile 2.5
  Eigen::VectorXd ci_hi;   // percentile 97.5
  double r2_adj = std::numeric_limits<double>::quiet_NaN();
  int paths_used = 0;
  int bootstrap_used = 0;
};

// Prevalence-weighted least squares of estimated path means on the design.
inline MsmFit fit_msm(const std::vector<double>& means,
                      const std::vector<double>& prevalences,
                      const std::vector<TreatmentPath>& paths,
                      const MsmDesign& design) {
  const int N = static_cast<int>(means.size());
  const int p = design.cols();
  if (N != static_cast<int>(prevalences.size()) ||
      N != static_cast<int>(paths.size()))
    throw StructuralError("means, prevalences, and paths must align");
  if (N < p)
    throw FitError("MSM design has " + std::to_string(p) +
                   " columns but only " + std::to_string(N) +
                   " estimated paths");

  Eigen::MatrixXd X(N, p);
  Eigen::VectorXd y(N), w(N);
  for (int i = 0; i < N; ++i) {
    X.row(i) = design.row(paths[i]);
    y(i) = means[i];
    w(i) = prevalences[i];
  }
  const double wsum = w.sum();
  if (wsum <= 0) throw FitError("MSM path prevalences sum to zero");
  w /= wsum;

  Eigen::VectorXd sw = w.array().sqrt();
  Eigen::MatrixXd Xw = sw.asDiagonal() * X;
  Eigen::VectorXd yw = sw.asDiagonal() * y;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    const auto perm = qr.colsPermutation().indices();
    std::string cols;
    const auto names = design.labels();
    for (int j = qr.rank(); j < p; ++j) {
      if (!cols.empty()) cols += ", ";
      cols += names[perm(j)];
    }
    throw FitError("MSM design is rank deficient on the realized paths; "
                   "collinear columns: " + cols);
  }

  MsmFit fit;
  fit.names = design.labels();
  fit.coef = qr.solve(yw);
  fit.paths_used = N;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  fit.se = Eigen::VectorXd::Constant(p, nan);
  fit.ci_lo = Eigen::VectorXd::Constant(p, nan);
  fit.ci_hi = Eigen::VectorXd::Constant(p, nan);

  Eigen::VectorXd fitted = X * fit.coef;
  const double ybar = w.dot(y);
  double ss_res = 0, ss_tot = 0;
  for (int i = 0; i < N; ++i) {
    ss_res += w(i) * (y(i) - fitted(i)) * (y(i) - fitted(i));
    ss_tot += w(i) * (y(i) - ybar) * (y(i) - ybar);
  }
  if (ss_tot > 0 && N > p) {
    const double r2 = 1.0 - ss_res / ss_tot;
    fit.r2_adj = 1.0 - (1.0 - r2) * (N - 1.0) / (N - p);
  } else if (ss_tot > 0) {
    fit.r2_adj = 1.0 - ss_res / ss_tot;
  }
  return fit;
}

// Hajek mean for one path: weights are already simplex-normalized.
inline double hajek_mean(const Eigen::VectorXd& outcome,
                         const std::vector<int>& members,
                         const Eigen::VectorXd& weights) {
  if (static_cast<int>(members.size()) != weights.size())
    throw StructuralError("weight/outcome length mismatch");
  double s = 0;
  for (std::size_t j = 0; j < members.size(); ++j)
    s += weights(static_cast<int>(j)) * outcome(members[j]);
  return s;
}

inline std::vector<double> estimate_path_means(
    const PanelDataset& data, const std::vector<QpProblem>& problems,
    const std::vector<WeightSolution>& solutions) {
  std::vector<double> means;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    if (solutions[i].status == SolveStatus::Optimal)
      means.push_back(
          hajek_mean(data.outcome, problems[i].members, solutions[i].weights));
    else
      means.push_back(std::numeric_limits<double>::quiet_NaN());
  }
  return means;
}

struct BaoConfig {
  TuningConfig tuning;
  int bootstrap = 100;
  std::uint64_t seed = 0;
  SolverOptions solver;
  unsigned threads = 1;
};

struct PathReport {
  TreatmentPath path;
  int count = 0;
  double prevalence = 0.0;
  bool feasible = false;
  double mean = std::numeric_limits<double>::quiet_NaN();
  std::string note;             // reason when the mean is missing
  double ladder_multiplier = 1.0;
  double objective = 0.0;
  double ess = 0.0;
  double cv = 0.0;
  double max_weight = 0.0;
};

struct BaoResult {
  double delta_star = 0.0;
  TuningReport tuning;
  std::vector<PathReport> paths;
  std::optional<MsmFit> msm;
  BalanceTable balance;
  std::vector<std::string> warnings;
  int bootstrap_requested = 0;
  int bootstrap_used = 0;
  int bootstrap_draws = 0;

  // Heavy per-path payloads for diagnostics and export.
  std::vector<PathWeights> weights;
};

namespace estdetail {

struct PathSolveOutcome {
  std::vector<WeightSolution> solutions;
  std::vector<double> multipliers;
  std::vector<Eigen::VectorXd> effective_tol;
};

// Solve every realized path at the given state, walking the relaxation
// ladder when a path is infeasible at the base tolerance.
inline PathSolveOutcome solve_all_paths(const BalanceState& state,
                                        const SolverOptions& solver) {
  PathSolveOutcome out;
  for (std::size_t i = 0; i < state.problems.size(); ++i) {
    RelaxResult rr = relax_to_feasible(state.problems[i], solver.ladder, solver);
    out.solutions.push_back(rr.solution);
    out.multipliers.push_back(rr.feasible ? rr.multiplier : solver.ladder.back());
    out.effective_tol.push_back(state.problems[i].delta *
                                (rr.feasible ? rr.multiplier : 1.0));
  }
  return out;
}

struct BootstrapDraw {
  bool usable = false;
  Eigen::VectorXd coef;
};

inline BootstrapDraw bootstrap_replicate(const PanelDataset& data,
                                         const BalanceSpec& spec_at_delta,
                                         const MsmDesign& design,
                                         const SolverOptions& solver,
                                         RngStream stream) {
  BootstrapDraw draw;
  std::vector<int> picks(data.n);
  for (int i = 0; i < data.n; ++i)
    picks[i] = static_cast<int>(stream.below(data.n));
  std::sort(picks.begin(), picks.end());
  PanelDataset resample = resample_units(data, picks);
  BalanceState state = build_balance_state(resample, spec_at_delta);
  PathSolveOutcome solved = solve_all_paths(state, solver);

  std::vector<double> means, prev;
  std::vector<TreatmentPath> paths;
  for (std::size_t i = 0; i < state.paths.size(); ++i) {
    if (solved.solutions[i].status != SolveStatus::Optimal) continue;
    means.push_back(hajek_mean(resample.outcome, state.problems[i].members,
                               solved.solutions[i].weights));
    prev.push_back(state.strata.prevalence(state.paths[i].code));
    paths.push_back(state.paths[i]);
  }
  if (static_cast<int>(paths.size()) < design.cols()) return draw;
  try {
    MsmFit fit = fit_msm(means, prev, paths, design);
    draw.coef = fit.coef;
    draw.usable = true;
  } catch (const FitError&) {
    draw.usable = false;
  }
  return draw;
}

}  // namespace estdetail

// The full estimation pipeline: feature specification is the caller's,
// tolerance tuning, path weight solving with relaxation, balance
// assessment, Hajek means, prevalence-weighted MSM, and bootstrap
// percentile intervals re-solving at the tuned tolerance.  Censoring is
// honored whenever the dataset carries indicators: projections and targets
// use the uncensored population at each time, weights live on complete
// cases.
inline BaoResult run_bao(const PanelDataset& data, const BalanceSpec& spec,
                         const MsmDesign& design, const BaoConfig& cfg) {
  data.validate();
  BaoResult result;
  result.bootstrap_requested = cfg.bootstrap;

  // Step 2: tolerance tuning.
  result.tuning = tune_delta(data, spec, cfg.tuning, cfg.seed, cfg.solver,
                             cfg.threads);
  if (!result.tuning.ok)
    throw TuningError(
        "every tuning candidate was infeasible on at least half the "
        "resamples");
  result.delta_star = result.tuning.selected;
  const BalanceSpec spec_star = spec.with_delta(result.delta_star);

  // Step 3: solve the weight programs on the full sample.
  BalanceState state = build_balance_state(data, spec_star);
  estdetail::PathSolveOutcome solved =
      estdetail::solve_all_paths(state, cfg.solver);

  // Step 4: balance assessment.
  result.balance =
      residual_balance_table(state, solved.solutions, solved.effective_tol);
  for (const auto& w : state.fits.warnings) result.warnings.push_back(w);
  for (const auto& row : result.balance.rows)
    if (row.post_asmd > kAsmdWarnThreshold) {
      result.warnings.push_back("post-weighting ASMD " +
                                format_double(row.post_asmd) + " above " +
                                format_double(kAsmdWarnThreshold) + " for " +
                                row.feature + " on path " + row.path.label());
    }

  // Step 5: Hajek means and the MSM on feasible paths.
  std::vector<double> means, prev;
  std::vector<TreatmentPath> fit_paths;
  for (std::size_t i = 0; i < state.paths.size(); ++i) {
    PathReport pr;
    pr.path = state.paths[i];
    pr.count = static_cast<int>(state.problems[i].members.size());
    pr.prevalence = state.strata.prevalence(pr.path.code);
    const WeightSolution& sol = solved.solutions[i];
    if (sol.status == SolveStatus::Optimal) {
      pr.feasible = true;
      pr.mean = hajek_mean(data.outcome, state.problems[i].members, sol.weights);
      pr.ladder_multiplier = solved.multipliers[i];
      pr.objective = sol.objective;
      pr.ess = sol.ess;
      pr.cv = sol.cv;
      pr.max_weight = sol.max_weight;
      means.push_back(pr.mean);
      prev.push_back(pr.prevalence);
      fit_paths.push_back(pr.path);

      PathWeights pw;
      pw.path = pr.path;
      pw.members = state.problems[i].members;
      pw.weights = sol.weights;
      result.weights.push_back(std::move(pw));
    } else {
      pr.note = "infeasible at every ladder entry; dropped from the MSM";
      result.warnings.push_back("path " + pr.path.label() + " " + pr.note);
    }
    result.paths.push_back(std::move(pr));
  }
  result.msm = fit_msm(means, prev, fit_paths, design);

  // Step 6: bootstrap standard errors at the tuned tolerance.
  if (cfg.bootstrap > 0) {
    RngStream root = RngStream(cfg.seed).child("boot");
    const int target = cfg.bootstrap;
    const long draw_cap = 10L * target;
    std::vector<Eigen::VectorXd> draws;
    long next_draw = 0;
    while (static_cast<int>(draws.size()) < target && next_draw < draw_cap) {
      const long batch = std::min<long>(
          draw_cap - next_draw,
          std::max<long>(target - static_cast<long>(draws.size()),
                         cfg.threads));
      std::vector<estdetail::BootstrapDraw> slot(batch);
      parallel_for(
          static_cast<std::size_t>(batch),
          [&](std::size_t j) {
            slot[j] = estdetail::bootstrap_replicate(
                data, spec_star, design, cfg.solver,
                root.child(static_cast<std::uint64_t>(next_draw + j)));
          },
          cfg.threads);
      for (const auto& d : slot) {
        if (d.usable && static_cast<int>(draws.size()) < target)
          draws.push_back(d.coef);
      }
      next_draw += batch;
    }
    result.bootstrap_used = static_cast<int>(draws.size());
    result.bootstrap_draws = static_cast<int>(next_draw);
    if (!draws.empty()) {
      const int p = design.cols();
      for (int j = 0; j < p; ++j) {
        std::vector<double> vals;
        vals.reserve(draws.size());
        for (const auto& d : draws) vals.push_back(d(j));
        result.msm->se(j) = sd_of(vals);
        // Percentile interval, widened if needed so it always contains the
        // full-sample estimate.
        result.msm->ci_lo(j) =
            std::min(quantile_type7(vals, 0.025), result.msm->coef(j));
        result.msm->ci_hi(j) =
            std::max(quantile_type7(vals, 0.975), result.msm->coef(j));
      }
      result.msm->bootstrap_used = result.bootstrap_used;
    }
  }

  // Balance postcondition: accepted weights satisfy their (effective)
  // constraints within the feasibility slack.
  for (std::size_t i = 0; i < state.paths.size(); ++i) {
    const WeightSolution& sol = solved.solutions[i];
    if (sol.status != SolveStatus::Optimal) continue;
    Eigen::VectorXd gap =
        (state.problems[i].A * sol.weights - state.problems[i].b).cwiseAbs() -
        solved.effective_tol[i];
    if (gap.maxCoeff() > 1e-7)
      throw StructuralError("accepted weights violate balance constraints on "
                            "path " + state.paths[i].label());
  }
  return result;
}

// Censoring-aware entry point; with no one censored it runs the identical
// code path and returns an identical result.
inline BaoResult run_bao_censored(const PanelDataset& data,
                                  const BalanceSpec& spec,
                                  const MsmDesign& design,
                                  const BaoConfig& cfg) {
  if (!data.censoring)
    return run_bao(data, spec, design, cfg);
  return run_bao(data, spec, design, cfg);
}

inline nlohmann::json to_json(const MsmFit& fit) {
  nlohmann::json coef = nlohmann::json::object();
  for (std::size_t j = 0; j < fit.names.size(); ++j) {
    const int i = static_cast<int>(j);
    coef[fit.names[j]] = {{"estimate", fit.coef(i)},
                          {"se", fit.se(i)},
                          {"ci_lower", fit.ci_lo(i)},
                          {"ci_upper", fit.ci_hi(i)}};
  }
  return nlohmann::json{{"coefficients", coef},
                        {"r2_adj", fit.r2_adj},
                        {"paths_used", fit.paths_used},
                        {"bootstrap_used", fit.bootstrap_used}};
}

inline nlohmann::json to_json(const BaoResult& result) {
  nlohmann::json paths = nlohmann::json::array();
  for (const auto& p : result.paths) {
    nlohmann::json jp{{"path", p.path.label()},
                      {"count", p.count},
                      {"prevalence", p.prevalence},
                      {"feasible", p.feasible}};
    if (p.feasible) {
      jp["mean"] = p.mean;
      jp["ladder_multiplier"] = p.ladder_multiplier;
      jp["objective"] = p.objective;
      jp["ess"] = p.ess;
      jp["cv"] = p.cv;
      jp["max_weight"] = p.max_weight;
    } else {
      jp["note"] = p.note;
    }
    paths.push_back(std::move(jp));
  }
  nlohmann::json j{{"delta_star", result.delta_star},
                   {"tuning", to_json(result.tuning)},
                   {"paths", paths},
                   {"warnings", result.warnings},
                   {"bootstrap",
                    {{"requested", result.bootstrap_requested},
                     {"used", result.bootstrap_used},
                     {"draws", result.bootstrap_draws}}}};
  if (result.msm) j["msm"] = to_json(*result.msm);
  j["balance"] = {{"mean_post_asmd", result.balance.mean_post_asmd()},
                  {"max_post_asmd", result.balance.max_post_asmd()},
                  {"unsatisfied_rows", result.balance.unsatisfied()}};
  return j;
}

}  // namespace bao
