#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "bao/errors.hpp"
#include "bao/features.hpp"
#include "bao/panel.hpp"

namespace bao {

// Least-squares projection of each time-t feature block onto the full
// feature history, fit separately within treatment-history strata.  The
// residuals are the quantities the weights must balance.
struct ProjectionFit {
  struct Fit {
    Eigen::MatrixXd beta;  // (intercept? + sum_{s<t} P_s) x P_t
    int rank = 0;
    double rss = 0.0;
    int stratum_size = 0;
    bool fallback_zero = false;  // stratum too small, residual = raw feature
  };

  bool intercept = true;
  bool pooled_on_last = false;
  // key: (t, fitting-group code).  Group = full prefix z_{t-1}, or just the
  // last treatment when pooling is on.
  std::map<std::pair<int, std::uint32_t>, Fit> fits;
  std::vector<std::string> warnings;

  std::uint32_t group_of(int t, std::uint32_t parent_prefix) const {
    return pooled_on_last ? ((parent_prefix >> (t - 2)) & 1u) : parent_prefix;
  }
  const Fit& at(int t, std::uint32_t parent_prefix) const {
    auto it = fits.find({t, group_of(t, parent_prefix)});
    if (it == fits.end())
      throw StructuralError("no projection fit for prefix at t=" +
                            std::to_string(t));
    return it->second;
  }
};

namespace detail {

inline int history_width(const FeatureMatrix& features, int t) {
  int w = 0;
  for (int s = 1; s < t; ++s) w += features.cols(s);
  return w;
}

inline void fill_history_row(const FeatureMatrix& features, int t, int unit,
                             bool intercept, Eigen::RowVectorXd& row) {
  int off = 0;
  if (intercept) row(off++) = 1.0;
  for (int s = 1; s < t; ++s) {
    row.segment(off, features.cols(s)) = features.at(s).row(unit);
    off += features.cols(s);
  }
}

}  // namespace detail

inline ProjectionFit fit_projections(const FeatureMatrix& features,
                                     const PathStrata& strata,
                                     bool intercept = true,
                                     bool pool_on_last_treatment = false) {
  ProjectionFit out;
  out.intercept = intercept;
  out.pooled_on_last = pool_on_last_treatment;
  const int T = features.periods();
  for (int t = 2; t <= T; ++t) {
    const int width = (intercept ? 1 : 0) + detail::history_width(features, t);
    // Fitting groups: realized prefixes, or their union by last treatment.
    std::map<std::uint32_t, std::vector<int>> groups;
    for (const auto& [prefix, idx] : strata.levels[t - 1]) {
      const std::uint32_t g = out.group_of(t, prefix);
      auto& members = groups[g];
      members.insert(members.end(), idx.begin(), idx.end());
    }
    for (auto& [g, idx] : groups) {
      std::sort(idx.begin(), idx.end());
      ProjectionFit::Fit fit;
      fit.stratum_size = static_cast<int>(idx.size());
      const int P = features.cols(t);
      if (idx.size() < 2) {
        fit.beta = Eigen::MatrixXd::Zero(width, P);
        fit.fallback_zero = true;
        out.warnings.push_back("stratum of size " +
                               std::to_string(idx.size()) + " at t=" +
                               std::to_string(t) +
                               "; projection coefficients set to zero");
      } else {
        Eigen::MatrixXd design(static_cast<int>(idx.size()), width);
        Eigen::MatrixXd response(static_cast<int>(idx.size()), P);
        Eigen::RowVectorXd row(width);
        for (std::size_t r = 0; r < idx.size(); ++r) {
          detail::fill_history_row(features, t, idx[r], intercept, row);
          design.row(static_cast<int>(r)) = row;
          response.row(static_cast<int>(r)) = features.at(t).row(idx[r]);
        }
        // Minimum-norm solution; rank-revealing so collinear histories and
        // strata smaller than the regressor count are handled uniformly.
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(design);
        fit.beta = cod.solve(response);
        fit.rank = static_cast<int>(cod.rank());
        fit.rss = (design * fit.beta - response).squaredNorm();
      }
      out.fits[{t, g}] = std::move(fit);
    }
  }
  return out;
}

// Residual blocks plus balance targets.  R_1 is the raw first-period
// feature block; later blocks subtract each unit's own-stratum projection.
// Rows without an observed X_t (censored units) are NaN.
struct ResidualSet {
  std::vector<Eigen::MatrixXd> blocks;           // per t, n x P_{g_t}
  std::vector<std::vector<std::string>> labels;  // shared with features
  // Balance target per (t, parent prefix z_{t-1}): mean residual over the
  // parent stratum.  t = 1 is keyed by prefix 0 (the full sample).
  std::map<std::pair<int, std::uint32_t>, Eigen::VectorXd> targets;

  int periods() const { return static_cast<int>(blocks.size()); }
  int cols(int t) const { return static_cast<int>(blocks[t - 1].cols()); }
  const Eigen::MatrixXd& at(int t) const { return blocks[t - 1]; }

  const Eigen::VectorXd& target(int t, std::uint32_t parent) const {
    auto it = targets.find({t, parent});
    if (it == targets.end())
      throw StructuralError("no balance target for prefix at t=" +
                            std::to_string(t));
    return it->second;
  }
};

inline ResidualSet compute_residuals(const FeatureMatrix& features,
                                     const ProjectionFit& fits,
                                     const PathStrata& strata) {
  ResidualSet out;
  const int T = features.periods();
  out.labels = features.labels;
  out.blocks.resize(T);

  out.blocks[0] = features.at(1);
  for (int t = 2; t <= T; ++t) {
    const int n = static_cast<int>(features.at(t).rows());
    const int P = features.cols(t);
    Eigen::MatrixXd R = Eigen::MatrixXd::Constant(
        n, P, std::numeric_limits<double>::quiet_NaN());
    const int width =
        (fits.intercept ? 1 : 0) + detail::history_width(features, t);
    Eigen::RowVectorXd row(width);
    for (const auto& [prefix, idx] : strata.levels[t - 1]) {
      const auto& fit = fits.at(t, prefix);
      for (int i : idx) {
        detail::fill_history_row(features, t, i, fits.intercept, row);
        R.row(i) = features.at(t).row(i) - row * fit.beta;
      }
    }
    out.blocks[t - 1] = std::move(R);
  }

  for (int t = 1; t <= T; ++t)
    for (const auto& [parent, idx] : strata.levels[t - 1]) {
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(out.cols(t));
      for (int i : idx) mean += out.blocks[t - 1].row(i).transpose();
      if (!idx.empty()) mean /= static_cast<double>(idx.size());
      out.targets[{t, parent}] = std::move(mean);
    }
  return out;
}

// Audit export: unit id, t, feature label, residual.
inline void export_residuals(const ResidualSet& res,
                             const std::vector<std::string>& ids,
                             std::ostream& out) {
  out << "id,t,feature,residual\n";
  for (int t = 1; t <= res.periods(); ++t)
    for (int i = 0; i < res.at(t).rows(); ++i)
      for (int p = 0; p < res.cols(t); ++p)
        out << ids[i] << "," << t << "," << res.labels[t - 1][p] << ","
            << format_double(res.at(t)(i, p)) << "\n";
}

}  // namespace bao
