#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bao/errors.hpp"
#include "bao/panel.hpp"

namespace bao {

// Closed transform vocabulary so balance specifications stay serializable
// and auditable.  Columns are 1-based within the time block.
struct FeatureDef {
  enum class Kind { Identity, Square, Interaction, Indicator };
  Kind kind = Kind::Identity;
  int col = 1;
  int col_b = 1;           // interaction partner
  double threshold = 0.0;  // indicator cut

  std::string label(int t) const {
    const std::string base = "x" + std::to_string(t) + "_";
    switch (kind) {
      case Kind::Identity:
        return base + std::to_string(col);
      case Kind::Square:
        return base + std::to_string(col) + "^2";
      case Kind::Interaction:
        return base + std::to_string(col) + "*" + base + std::to_string(col_b);
      case Kind::Indicator:
        return "1{" + base + std::to_string(col) + ">" +
               format_double(threshold) + "}";
    }
    return base;
  }
};

struct BalanceSpec {
  std::vector<std::vector<FeatureDef>> transforms;  // per t = 1..T
  std::vector<Eigen::VectorXd> delta_std;           // per t, >= 0, may be empty
  bool include_intercept_in_projection = true;
  bool pool_on_last_treatment = false;

  int periods() const { return static_cast<int>(transforms.size()); }
  int feature_count(int t) const {
    return static_cast<int>(transforms[t - 1].size());
  }

  // Identity map over every raw covariate column, flat standardized
  // tolerance (the usual starting point).
  static BalanceSpec identity(const PanelDataset& data, double delta = 0.0) {
    BalanceSpec spec;
    spec.transforms.resize(data.T);
    spec.delta_std.resize(data.T);
    for (int t = 1; t <= data.T; ++t) {
      for (int p = 1; p <= data.dim(t); ++p)
        spec.transforms[t - 1].push_back({FeatureDef::Kind::Identity, p, p, 0});
      spec.delta_std[t - 1] =
          Eigen::VectorXd::Constant(data.dim(t), delta);
    }
    return spec;
  }

  // Copy with every delta entry replaced by the scalar candidate.
  BalanceSpec with_delta(double delta) const {
    BalanceSpec out = *this;
    out.delta_std.resize(transforms.size());
    for (std::size_t t = 0; t < transforms.size(); ++t)
      out.delta_std[t] = Eigen::VectorXd::Constant(
          static_cast<int>(transforms[t].size()), delta);
    return out;
  }

  void check_against(const PanelDataset& data) const {
    if (periods() != data.T)
      throw SpecError("spec covers " + std::to_string(periods()) +
                      " periods, data has " + std::to_string(data.T));
    for (int t = 1; t <= data.T; ++t) {
      if (transforms[t - 1].empty())
        throw SpecError("no features at t=" + std::to_string(t));
      for (const auto& f : transforms[t - 1]) {
        auto check_col = [&](int c) {
          if (c < 1 || c > data.dim(t))
            throw SpecError("transform references missing column " +
                            std::to_string(c) + " at t=" + std::to_string(t));
        };
        check_col(f.col);
        if (f.kind == FeatureDef::Kind::Interaction) check_col(f.col_b);
      }
      if (t - 1 < static_cast<int>(delta_std.size()) &&
          delta_std[t - 1].size() > 0) {
        if (delta_std[t - 1].size() != feature_count(t))
          throw SpecError("delta_std length mismatch at t=" +
                          std::to_string(t));
        if ((delta_std[t - 1].array() < 0).any())
          throw SpecError("delta_std must be nonnegative at t=" +
                          std::to_string(t));
      }
    }
  }
};

// Materialized g_t{X_t} blocks with column labels.
struct FeatureMatrix {
  std::vector<Eigen::MatrixXd> blocks;             // per t, n x P_{g_t}
  std::vector<std::vector<std::string>> labels;    // per t

  int periods() const { return static_cast<int>(blocks.size()); }
  int cols(int t) const { return static_cast<int>(blocks[t - 1].cols()); }
  const Eigen::MatrixXd& at(int t) const { return blocks[t - 1]; }
};

inline FeatureMatrix apply_features(const PanelDataset& data,
                                    const BalanceSpec& spec) {
  spec.check_against(data);
  FeatureMatrix out;
  out.blocks.resize(data.T);
  out.labels.resize(data.T);
  for (int t = 1; t <= data.T; ++t) {
    const Eigen::MatrixXd& X = data.covariates[t - 1];
    const auto& defs = spec.transforms[t - 1];
    Eigen::MatrixXd G(data.n, static_cast<int>(defs.size()));
    for (std::size_t j = 0; j < defs.size(); ++j) {
      const auto& f = defs[j];
      const int jj = static_cast<int>(j);
      switch (f.kind) {
        case FeatureDef::Kind::Identity:
          G.col(jj) = X.col(f.col - 1);
          break;
        case FeatureDef::Kind::Square:
          G.col(jj) = X.col(f.col - 1).array().square();
          break;
        case FeatureDef::Kind::Interaction:
          G.col(jj) =
              X.col(f.col - 1).array() * X.col(f.col_b - 1).array();
          break;
        case FeatureDef::Kind::Indicator:
          G.col(jj) = (X.col(f.col - 1).array() > f.threshold).cast<double>();
          break;
      }
      out.labels[t - 1].push_back(f.label(t));
    }
    out.blocks[t - 1] = std::move(G);
  }
  return out;
}

// Sample SD (denominator n-1) of one column over a unit subset.
inline double subset_sd(const Eigen::MatrixXd& block, int col,
                        const std::vector<int>& idx) {
  const int m = static_cast<int>(idx.size());
  if (m < 2) return 0.0;
  double mean = 0;
  for (int i : idx) mean += block(i, col);
  mean /= m;
  double ss = 0;
  for (int i : idx) {
    const double d = block(i, col) - mean;
    ss += d * d;
  }
  return std::sqrt(ss / (m - 1));
}

inline double subset_mean(const Eigen::MatrixXd& block, int col,
                          const std::vector<int>& idx) {
  if (idx.empty()) return 0.0;
  double mean = 0;
  for (int i : idx) mean += block(i, col);
  return mean / static_cast<double>(idx.size());
}

struct ColumnScale {
  double sd = 0.0;
  bool degenerate = false;  // zero variance or stratum smaller than 2

  // Unit conversion for standardized tolerances; constant columns fall back
  // to max(|mean|, 1) so the constraint stays well-posed.
  double tolerance_unit(double fallback_mean) const {
    if (!degenerate && sd > 0) return sd;
    return std::max(std::abs(fallback_mean), 1.0);
  }
};

// Scales per (t, column, parent prefix).  Works on any per-time column set;
// the weighting pipeline feeds residual blocks here so delta_std converts
// to the units the constraints actually live in.
struct ScaleTable {
  // key: (t, prefix code of length t-1) -> per-column scale
  std::map<std::pair<int, std::uint32_t>, std::vector<ColumnScale>> entries;

  const std::vector<ColumnScale>& at(int t, std::uint32_t parent) const {
    auto it = entries.find({t, parent});
    if (it == entries.end())
      throw StructuralError("no scales for prefix at t=" + std::to_string(t));
    return it->second;
  }
};

inline ScaleTable feature_scales(const std::vector<Eigen::MatrixXd>& blocks,
                                 const PathStrata& strata) {
  ScaleTable table;
  const int T = static_cast<int>(blocks.size());
  for (int t = 1; t <= T; ++t) {
    for (const auto& [parent, idx] : strata.levels[t - 1]) {
      std::vector<ColumnScale> scales;
      const int P = static_cast<int>(blocks[t - 1].cols());
      scales.reserve(P);
      for (int p = 0; p < P; ++p) {
        ColumnScale s;
        s.sd = subset_sd(blocks[t - 1], p, idx);
        s.degenerate = idx.size() < 2 || s.sd == 0.0;
        scales.push_back(s);
      }
      table.entries[{t, parent}] = std::move(scales);
    }
  }
  return table;
}

// --- JSON serialization -----------------------------------------------

inline nlohmann::json to_json(const FeatureDef& f) {
  using Kind = FeatureDef::Kind;
  nlohmann::json j;
  switch (f.kind) {
    case Kind::Identity:
      j = {{"type", "identity"}, {"col", f.col}};
      break;
    case Kind::Square:
      j = {{"type", "square"}, {"col", f.col}};
      break;
    case Kind::Interaction:
      j = {{"type", "interaction"}, {"a", f.col}, {"b", f.col_b}};
      break;
    case Kind::Indicator:
      j = {{"type", "indicator"}, {"col", f.col}, {"threshold", f.threshold}};
      break;
  }
  return j;
}

inline FeatureDef feature_def_from_json(const nlohmann::json& j) {
  FeatureDef f;
  const std::string type = j.at("type").get<std::string>();
  if (type == "identity") {
    f.kind = FeatureDef::Kind::Identity;
    f.col = j.at("col").get<int>();
  } else if (type == "square") {
    f.kind = FeatureDef::Kind::Square;
    f.col = j.at("col").get<int>();
  } else if (type == "interaction") {
    f.kind = FeatureDef::Kind::Interaction;
    f.col = j.at("a").get<int>();
    f.col_b = j.at("b").get<int>();
  } else if (type == "indicator") {
    f.kind = FeatureDef::Kind::Indicator;
    f.col = j.at("col").get<int>();
    f.threshold = j.at("threshold").get<double>();
  } else {
    throw SpecError("unknown transform type '" + type + "'");
  }
  return f;
}

inline nlohmann::json to_json(const BalanceSpec& spec) {
  nlohmann::json transforms = nlohmann::json::object();
  nlohmann::json deltas = nlohmann::json::object();
  for (int t = 1; t <= spec.periods(); ++t) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& f : spec.transforms[t - 1]) list.push_back(to_json(f));
    transforms["t" + std::to_string(t)] = std::move(list);
    if (t - 1 < static_cast<int>(spec.delta_std.size()) &&
        spec.delta_std[t - 1].size() > 0) {
      nlohmann::json d = nlohmann::json::array();
      for (int p = 0; p < spec.delta_std[t - 1].size(); ++p)
        d.push_back(spec.delta_std[t - 1](p));
      deltas["t" + std::to_string(t)] = std::move(d);
    }
  }
  return nlohmann::json{{"transforms", transforms},
                        {"delta_std", deltas},
                        {"intercept", spec.include_intercept_in_projection},
                        {"pool_on_last_treatment", spec.pool_on_last_treatment}};
}

inline BalanceSpec balance_spec_from_json(const nlohmann::json& j) {
  BalanceSpec spec;
  const auto& transforms = j.at("transforms");
  for (int t = 1;; ++t) {
    const std::string key = "t" + std::to_string(t);
    if (!transforms.contains(key)) break;
    std::vector<FeatureDef> defs;
    for (const auto& f : transforms.at(key))
      defs.push_back(feature_def_from_json(f));
    spec.transforms.push_back(std::move(defs));
  }
  if (spec.transforms.empty()) throw SpecError("transforms is empty");
  spec.delta_std.resize(spec.transforms.size());
  if (j.contains("delta_std")) {
    for (int t = 1; t <= spec.periods(); ++t) {
      const std::string key = "t" + std::to_string(t);
      if (!j.at("delta_std").contains(key)) continue;
      const auto& d = j.at("delta_std").at(key);
      Eigen::VectorXd v(d.size());
      for (std::size_t p = 0; p < d.size(); ++p)
        v(static_cast<int>(p)) = d.at(p).get<double>();
      spec.delta_std[t - 1] = std::move(v);
    }
  }
  spec.include_intercept_in_projection = j.value("intercept", true);
  spec.pool_on_last_treatment = j.value("pool_on_last_treatment", false);
  return spec;
}

}  // namespace bao
