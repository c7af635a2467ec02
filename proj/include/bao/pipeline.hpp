#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "bao/diagnostics.hpp"
#include "bao/features.hpp"
#include "bao/ortho.hpp"
#include "bao/panel.hpp"
#include "bao/qp.hpp"

namespace bao {

// Everything derived from one dataset + spec on the way to the weight
// programs: strata, features, stratified projections, residuals, residual
// scales, and one QP per realized path.  Residuals do not depend on the
// tolerance, so tuning can rebuild only the delta conversion.
struct BalanceState {
  PathStrata strata;
  FeatureMatrix features;
  ProjectionFit fits;
  ResidualSet residuals;
  ScaleTable scales;                 // over residual columns
  std::vector<TreatmentPath> paths;  // realized, ascending code
  std::vector<QpProblem> problems;   // aligned with paths

  int total_rows() const {
    int K = 0;
    for (int t = 1; t <= residuals.periods(); ++t) K += residuals.cols(t);
    return K;
  }
};

// Raw tolerances for one path at a given standardized spec: delta_std
// entries times the residual-column SD over the path's parent stratum.
inline Eigen::VectorXd raw_tolerances(const BalanceState& state,
                                      const BalanceSpec& spec,
                                      const TreatmentPath& path) {
  const int K = state.total_rows();
  Eigen::VectorXd out(K);
  int row = 0;
  for (int t = 1; t <= state.residuals.periods(); ++t) {
    const std::uint32_t parent = path.prefix(t - 1);
    const auto& scales = state.scales.at(t, parent);
    const Eigen::VectorXd& target = state.residuals.target(t, parent);
    for (int p = 0; p < state.residuals.cols(t); ++p, ++row) {
      const double dstd = spec.delta_std[t - 1].size() > 0
                              ? spec.delta_std[t - 1](p)
                              : 0.0;
      out(row) = dstd * scales[p].tolerance_unit(target(p));
    }
  }
  return out;
}

inline BalanceState build_balance_state(const PanelDataset& data,
                                        const BalanceSpec& spec) {
  spec.check_against(data);
  BalanceState state;
  state.strata = build_strata(data);
  state.features = apply_features(data, spec);
  state.fits = fit_projections(state.features, state.strata,
                               spec.include_intercept_in_projection,
                               spec.pool_on_last_treatment);
  state.residuals =
      compute_residuals(state.features, state.fits, state.strata);
  state.scales = feature_scales(state.residuals.blocks, state.strata);
  state.paths = state.strata.realized_paths();

  const int K = state.total_rows();
  for (const auto& path : state.paths) {
    QpProblem prob;
    prob.path = path;
    prob.members = state.strata.members(data.T, path.code);
    const int m = static_cast<int>(prob.members.size());
    prob.A.resize(K, m);
    prob.b.resize(K);
    prob.delta = raw_tolerances(state, spec, path);
    int row = 0;
    for (int t = 1; t <= data.T; ++t) {
      const Eigen::VectorXd& target =
          state.residuals.target(t, path.prefix(t - 1));
      for (int p = 0; p < state.residuals.cols(t); ++p, ++row) {
        for (int j = 0; j < m; ++j)
          prob.A(row, j) = state.residuals.at(t)(prob.members[j], p);
        prob.b(row) = target(p);
        prob.row_labels.push_back("t" + std::to_string(t) + ":" +
                                  state.residuals.labels[t - 1][p]);
      }
    }
    state.problems.push_back(std::move(prob));
  }
  return state;
}

// Balance table over the residual columns the QP actually constrains.
// Infeasible paths are diagnosed at uniform weights.
inline BalanceTable residual_balance_table(
    const BalanceState& state, const std::vector<WeightSolution>& solutions,
    const std::vector<Eigen::VectorXd>& tolerances) {
  std::vector<PathWeights> weights;
  for (std::size_t i = 0; i < state.paths.size(); ++i) {
    PathWeights pw;
    pw.path = state.paths[i];
    pw.members = state.problems[i].members;
    const int m = static_cast<int>(pw.members.size());
    if (solutions[i].status == SolveStatus::Optimal)
      pw.weights = solutions[i].weights;
    else
      pw.weights = Eigen::VectorXd::Constant(m, m > 0 ? 1.0 / m : 0.0);
    weights.push_back(std::move(pw));
  }
  return asmd_table(state.residuals.blocks, state.residuals.labels,
                    state.strata, weights, &tolerances);
}

}  // namespace bao
