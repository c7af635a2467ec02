#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

#include "bao/parallel.hpp"
#include "bao/pipeline.hpp"
#include "bao/rng.hpp"

namespace bao {

struct TuningCandidate {
  double delta = 0.0;
  double mean_imbalance = 0.0;   // grand mean post-weighting ASMD
  double infeasible_rate = 0.0;  // share of path solves that were infeasible
  double mean_cv = 0.0;          // over feasible path solves
};

struct TuningReport {
  std::vector<TuningCandidate> candidates;
  double selected = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
  int resamples = 0;
};

struct TuningConfig {
  std::vector<double> candidates = {0.001, 0.01, 0.05};
  int resamples = 20;
};

// Pick the standardized tolerance by unit-level bootstrap: for each
// candidate and resample, rebuild strata/residuals on the resample and
// solve every path, then score the resample weights OUT OF SAMPLE: how far
// the reweighted full-data residual columns sit from the full-data parent
// targets, in full-data SD units.  Tight tolerances overfit the resample
// (dispersed weights, noisy out-of-sample means); loose ones leave
// confounding imbalance, so the score trades bias against variance.
// Infeasible solves are penalized with their pre-weighting imbalance
// rather than dropped; candidates failing on half the resamples or more
// are disqualified.
inline TuningReport tune_delta(const PanelDataset& data,
                               const BalanceSpec& spec,
                               const std::vector<double>& candidates, int B,
                               std::uint64_t seed,
                               const SolverOptions& solver = {},
                               unsigned threads = 1) {
  if (B < 2) throw std::invalid_argument("tuning needs at least 2 resamples");
  if (candidates.empty())
    throw std::invalid_argument("tuning candidate set is empty");
  for (double c : candidates)
    if (c < 0) throw std::invalid_argument("tuning candidates must be >= 0");

  const int C = static_cast<int>(candidates.size());
  struct Cell {
    double imbalance = 0.0;
    int infeasible_solves = 0;
    int solves = 0;
    double cv_sum = 0.0;
    int cv_count = 0;
  };
  std::vector<std::vector<Cell>> grid(B, std::vector<Cell>(C));

  const BalanceState reference = build_balance_state(data, spec.with_delta(0));

  // Out-of-sample score for one path's weights on resampled rows: compare
  // the reweighted reference residuals to the reference targets.
  auto path_cells = [&](const TreatmentPath& path,
                        const std::vector<int>& rows,
                        const std::vector<int>& picks,
                        const Eigen::VectorXd& w) {
    double total = 0.0;
    int cells = 0;
    for (int t = 1; t <= reference.residuals.periods(); ++t) {
      const std::uint32_t parent = path.prefix(t - 1);
      const Eigen::VectorXd& target = reference.residuals.target(t, parent);
      const auto& scales = reference.scales.at(t, parent);
      for (int p = 0; p < reference.residuals.cols(t); ++p) {
        double wmean = 0.0;
        for (std::size_t j = 0; j < rows.size(); ++j)
          wmean += w(static_cast<int>(j)) *
                   reference.residuals.at(t)(picks[rows[j]], p);
        const double denom =
            scales[p].degenerate ? 1.0 : std::max(scales[p].sd, 1e-300);
        total += std::abs(wmean - target(p)) / denom;
        ++cells;
      }
    }
    return std::pair<double, int>{total, cells};
  };

  RngStream root = RngStream(seed).child("tune");
  parallel_for(
      static_cast<std::size_t>(B),
      [&](std::size_t b) {
        RngStream stream = root.child(static_cast<std::uint64_t>(b));
        std::vector<int> picks(data.n);
        for (int i = 0; i < data.n; ++i)
          picks[i] = static_cast<int>(stream.below(data.n));
        std::sort(picks.begin(), picks.end());
        PanelDataset resample = resample_units(data, picks);
        BalanceState state = build_balance_state(resample, spec.with_delta(0));
        for (int c = 0; c < C; ++c) {
          BalanceSpec cand = spec.with_delta(candidates[c]);
          Cell& cell = grid[b][c];
          double total = 0.0;
          int cells = 0;
          for (std::size_t pi = 0; pi < state.paths.size(); ++pi) {
            QpProblem prob = state.problems[pi];
            prob.delta = raw_tolerances(state, cand, state.paths[pi]);
            WeightSolution sol = solve_path(prob, solver);
            const int m = prob.m();
            ++cell.solves;
            Eigen::VectorXd w;
            if (sol.status == SolveStatus::Optimal) {
              cell.cv_sum += sol.cv;
              ++cell.cv_count;
              w = sol.weights;
            } else {
              ++cell.infeasible_solves;
              w = Eigen::VectorXd::Constant(m, 1.0 / m);
            }
            auto [sum, count] = path_cells(state.paths[pi], prob.members,
                                           picks, w);
            total += sum;
            cells += count;
          }
          cell.imbalance = cells > 0 ? total / cells : 0.0;
        }
      },
      threads);

  TuningReport report;
  report.resamples = B;
  for (int c = 0; c < C; ++c) {
    TuningCandidate tc;
    tc.delta = candidates[c];
    double cv_sum = 0;
    int cv_n = 0, infeas = 0, solves = 0;
    for (int b = 0; b < B; ++b) {
      tc.mean_imbalance += grid[b][c].imbalance;
      infeas += grid[b][c].infeasible_solves;
      solves += grid[b][c].solves;
      cv_sum += grid[b][c].cv_sum;
      cv_n += grid[b][c].cv_count;
    }
    tc.mean_imbalance /= B;
    tc.infeasible_rate =
        solves > 0 ? static_cast<double>(infeas) / solves : 0.0;
    tc.mean_cv = cv_n > 0 ? cv_sum / cv_n : 0.0;
    report.candidates.push_back(tc);
  }

  double best = std::numeric_limits<double>::infinity();
  for (const auto& tc : report.candidates) {
    if (tc.infeasible_rate >= 0.5) continue;
    // Strict inequality keeps ties on the smaller delta (candidates are
    // scanned in the caller's order, conventionally ascending).
    if (tc.mean_imbalance < best) {
      best = tc.mean_imbalance;
      report.selected = tc.delta;
      report.ok = true;
    }
  }
  return report;
}

inline TuningReport tune_delta(const PanelDataset& data,
                               const BalanceSpec& spec,
                               const TuningConfig& cfg, std::uint64_t seed,
                               const SolverOptions& solver = {},
                               unsigned threads = 1) {
  return tune_delta(data, spec, cfg.candidates, cfg.resamples, seed, solver,
                    threads);
}

inline nlohmann::json to_json(const TuningReport& report) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : report.candidates)
    cands.push_back({{"delta", c.delta},
                     {"mean_imbalance", c.mean_imbalance},
                     {"infeasible_rate", c.infeasible_rate},
                     {"mean_cv", c.mean_cv}});
  nlohmann::json j{{"candidates", cands},
                   {"resamples", report.resamples},
                   {"ok", report.ok}};
  if (report.ok) j["selected"] = report.selected;
  return j;
}

}  // namespace bao
