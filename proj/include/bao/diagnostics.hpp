#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "bao/features.hpp"
#include "bao/panel.hpp"

namespace bao {

// One balance cell: a (time, column, path) triple with pre/post-weighting
// imbalance against the parent-stratum mean, standardized by the parent
// stratum's unweighted SD.
struct BalanceRow {
  int t = 0;
  std::string feature;
  TreatmentPath path;
  double pre_asmd = 0.0;
  double post_asmd = 0.0;
  double raw_diff = 0.0;       // post-weighting, unstandardized
  double tolerance_raw = std::numeric_limits<double>::quiet_NaN();
  bool satisfied = true;
  bool degenerate_scale = false;
};

struct BalanceTable {
  std::vector<BalanceRow> rows;

  double mean_post_asmd() const {
    if (rows.empty()) return 0.0;
    double s = 0;
    for (const auto& r : rows) s += r.post_asmd;
    return s / static_cast<double>(rows.size());
  }
  double mean_pre_asmd() const {
    if (rows.empty()) return 0.0;
    double s = 0;
    for (const auto& r : rows) s += r.pre_asmd;
    return s / static_cast<double>(rows.size());
  }
  double max_post_asmd() const {
    double s = 0;
    for (const auto& r : rows) s = std::max(s, r.post_asmd);
    return s;
  }
  int unsatisfied() const {
    int c = 0;
    for (const auto& r : rows) c += !r.satisfied;
    return c;
  }
};

// Weights for one path, paired with the member indices they apply to.
struct PathWeights {
  TreatmentPath path;
  std::vector<int> members;
  Eigen::VectorXd weights;  // simplex-normalized over members
};

namespace diagdetail {

inline double weighted_mean(const Eigen::MatrixXd& block, int col,
                            const std::vector<int>& idx,
                            const Eigen::VectorXd& w) {
  double s = 0;
  for (std::size_t r = 0; r < idx.size(); ++r)
    s += w(static_cast<int>(r)) * block(idx[r], col);
  return s;
}

}  // namespace diagdetail

// ASMD table over per-time column blocks (features or residuals): compares
// the weighted path mean to the unweighted parent-stratum mean, divided by
// the parent-stratum SD.  Zero-SD columns report the raw difference and a
// degenerate flag.  `tolerances` (optional, per path then per row) marks
// rows satisfied/violated on the raw scale.
inline BalanceTable asmd_table(
    const std::vector<Eigen::MatrixXd>& blocks,
    const std::vector<std::vector<std::string>>& labels,
    const PathStrata& strata, const std::vector<PathWeights>& weights,
    const std::vector<Eigen::VectorXd>* tolerances = nullptr) {
  BalanceTable table;
  const int T = static_cast<int>(blocks.size());
  for (std::size_t wi = 0; wi < weights.size(); ++wi) {
    const auto& pw = weights[wi];
    int row_index = 0;
    for (int t = 1; t <= T; ++t) {
      const std::uint32_t parent = pw.path.prefix(t - 1);
      const auto& parent_idx = strata.members(t - 1, parent);
      const int P = static_cast<int>(blocks[t - 1].cols());
      for (int p = 0; p < P; ++p, ++row_index) {
        BalanceRow row;
        row.t = t;
        row.feature = labels[t - 1][p];
        row.path = pw.path;
        const double target = subset_mean(blocks[t - 1], p, parent_idx);
        const double sd = subset_sd(blocks[t - 1], p, parent_idx);
        row.degenerate_scale = parent_idx.size() < 2 || sd == 0.0;
        const double denom = row.degenerate_scale ? 1.0 : sd;

        const double post =
            diagdetail::weighted_mean(blocks[t - 1], p, pw.members, pw.weights);
        const Eigen::VectorXd uni = Eigen::VectorXd::Constant(
            static_cast<int>(pw.members.size()),
            pw.members.empty() ? 0.0 : 1.0 / pw.members.size());
        const double pre =
            diagdetail::weighted_mean(blocks[t - 1], p, pw.members, uni);
        row.raw_diff = post - target;
        row.post_asmd = std::abs(post - target) / denom;
        row.pre_asmd = std::abs(pre - target) / denom;
        if (tolerances) {
          row.tolerance_raw = (*tolerances)[wi](row_index);
          row.satisfied = std::abs(row.raw_diff) <= row.tolerance_raw + 1e-7;
        }
        table.rows.push_back(std::move(row));
      }
    }
  }
  return table;
}

struct WeightSummary {
  double cv = 0.0;
  double ess = 0.0;
  double max_weight = 0.0;
};

// CV uses the population (1/m) variance so tiny paths stay deterministic.
inline WeightSummary weight_summary(const Eigen::VectorXd& w) {
  WeightSummary s;
  const int m = static_cast<int>(w.size());
  if (m == 0) return s;
  const double sum = w.sum();
  const double sumsq = w.squaredNorm();
  s.ess = sumsq > 0 ? sum * sum / sumsq : 0.0;
  const double mean = sum / m;
  const double var = (w.array() - mean).square().sum() / m;
  s.cv = mean > 0 ? std::sqrt(var) / mean : 0.0;
  s.max_weight = w.maxCoeff();
  return s;
}

inline void write_balance_csv(const BalanceTable& table, std::ostream& out) {
  out << "path,t,feature,pre_asmd,post_asmd,raw_diff,tolerance_raw,satisfied,"
         "degenerate\n";
  for (const auto& r : table.rows)
    out << r.path.label() << "," << r.t << "," << r.feature << ","
        << format_double(r.pre_asmd) << "," << format_double(r.post_asmd)
        << "," << format_double(r.raw_diff) << ","
        << format_double(r.tolerance_raw) << "," << (r.satisfied ? 1 : 0)
        << "," << (r.degenerate_scale ? 1 : 0) << "\n";
}

}  // namespace bao
