#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bao/errors.hpp"
#include "bao/estimate.hpp"
#include "bao/panel.hpp"
#include "bao/stats.hpp"

namespace bao {

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LogisticFit {
  Eigen::VectorXd coef;
  bool converged = false;
  bool separation = false;
  int iterations = 0;
  double grad_norm = 0.0;
};

// Newton/IRLS with step halving; the negative log-likelihood decreases on
// every accepted step.  Coefficients past +/-30 with a still-live gradient
// flag separation and are capped there.
inline LogisticFit fit_logistic(const Eigen::MatrixXd& X,
                                const Eigen::VectorXd& y, int max_iter = 100,
                                double grad_tol = 1e-8) {
  const int n = static_cast<int>(X.rows());
  const int p = static_cast<int>(X.cols());
  if (n < p) throw FitError("logistic fit needs at least p observations");

  auto nll = [&](const Eigen::VectorXd& beta) {
    double s = 0;
    for (int i = 0; i < n; ++i) {
      const double eta = X.row(i).dot(beta);
      // log(1 + e^eta) - y*eta, computed stably.
      s += (eta > 0 ? eta + std::log1p(std::exp(-eta))
                    : std::log1p(std::exp(eta))) -
           y(i) * eta;
    }
    return s;
  };

  LogisticFit fit;
  fit.coef = Eigen::VectorXd::Zero(p);
  double current = nll(fit.coef);
  for (int it = 1; it <= max_iter; ++it) {
    fit.iterations = it;
    Eigen::VectorXd prob(n), w(n);
    for (int i = 0; i < n; ++i) {
      prob(i) = expit(X.row(i).dot(fit.coef));
      w(i) = std::max(prob(i) * (1.0 - prob(i)), 1e-12);
    }
    Eigen::VectorXd grad = X.transpose() * (y - prob);
    fit.grad_norm = grad.lpNorm<Eigen::Infinity>();
    // Perfect classification sends the likelihood to its supremum at
    // infinite coefficients; keep stepping until the cap flags it.
    bool perfect = true;
    for (int i = 0; i < n && perfect; ++i)
      perfect = y(i) == 1 ? prob(i) > 1.0 - 1e-6 : prob(i) < 1e-6;
    if (fit.grad_norm < grad_tol && !perfect) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw FitError("singular information matrix in logistic fit");
    Eigen::VectorXd step = ldlt.solve(grad);
    double scale = 1.0;
    Eigen::VectorXd trial = fit.coef + step;
    double trial_nll = nll(trial);
    // Near the optimum the quadratic improvement drops below the rounding
    // noise of the deviance; a tie within slack still counts as progress.
    const double slack = 1e-10 * (1.0 + std::abs(current));
    int halvings = 0;
    while (trial_nll > current + slack && halvings < 40) {
      scale *= 0.5;
      trial = fit.coef + scale * step;
      trial_nll = nll(trial);
      ++halvings;
    }
    if (trial_nll > current + slack) break;  // no improving step left
    fit.coef = trial;
    current = trial_nll;
    if (fit.coef.cwiseAbs().maxCoeff() > 30.0) {
      fit.separation = true;
      fit.coef = fit.coef.cwiseMax(-30.0).cwiseMin(30.0);
      break;
    }
  }
  if (!fit.converged && fit.grad_norm >= grad_tol &&
      fit.coef.cwiseAbs().maxCoeff() >= 30.0)
    fit.separation = true;
  return fit;
}

// Sequential treatment models: denominator P(Z_t = 1 | Z_{t-1}, X_t) with
// the current covariate block, numerator P(Z_t = 1 | Z_{1..t-1}) for
// stabilization.  Fit on units still uncensored at t.
struct PropensityModel {
  std::vector<LogisticFit> denominator;  // per t
  std::vector<LogisticFit> numerator;    // per t

  bool any_separation() const {
    for (const auto& f : denominator)
      if (f.separation) return true;
    for (const auto& f : numerator)
      if (f.separation) return true;
    return false;
  }
};

namespace compdetail {

inline Eigen::RowVectorXd denom_row(const PanelDataset& data, int i, int t) {
  const int P = data.dim(t);
  Eigen::RowVectorXd r(1 + (t >= 2 ? 1 : 0) + P);
  int off = 0;
  r(off++) = 1.0;
  if (t >= 2) r(off++) = data.treatments(i, t - 2);
  for (int p = 0; p < P; ++p) r(off++) = data.covariates[t - 1](i, p);
  return r;
}

inline Eigen::RowVectorXd numer_row(const PanelDataset& data, int i, int t) {
  Eigen::RowVectorXd r(t);  // intercept + z_1..z_{t-1}
  r(0) = 1.0;
  for (int s = 1; s < t; ++s) r(s) = data.treatments(i, s - 1);
  return r;
}

inline std::vector<int> uncensored_at(const PanelDataset& data, int t) {
  std::vector<int> idx;
  for (int i = 0; i < data.n; ++i)
    if (!data.censored_at(i, t)) idx.push_back(i);
  return idx;
}

}  // namespace compdetail

inline PropensityModel fit_propensity(const PanelDataset& data) {
  PropensityModel model;
  for (int t = 1; t <= data.T; ++t) {
    const auto idx = compdetail::uncensored_at(data, t);
    const int n = static_cast<int>(idx.size());
    Eigen::VectorXd y(n);
    Eigen::MatrixXd Xd(n, compdetail::denom_row(data, idx[0], t).size());
    Eigen::MatrixXd Xn(n, t);
    for (int r = 0; r < n; ++r) {
      y(r) = data.treatments(idx[r], t - 1);
      Xd.row(r) = compdetail::denom_row(data, idx[r], t);
      Xn.row(r) = compdetail::numer_row(data, idx[r], t);
    }
    model.denominator.push_back(fit_logistic(Xd, y));
    model.numerator.push_back(fit_logistic(Xn, y));
  }
  return model;
}

enum class IpwMode { Standard, Stabilized, Truncated };

inline IpwMode ipw_mode_named(const std::string& name) {
  if (name == "standard") return IpwMode::Standard;
  if (name == "stabilized") return IpwMode::Stabilized;
  if (name == "truncated") return IpwMode::Truncated;
  throw SpecError("unknown IPW mode '" + name + "'");
}

// Per-unit inverse probability weights over complete cases (NaN for
// censored units).  Probabilities are clipped away from 0 and 1.
inline Eigen::VectorXd ipw_weights(const PanelDataset& data,
                                   const PropensityModel& model, IpwMode mode,
                                   double truncation_quantile = 0.95) {
  const double eps = 1e-12;
  Eigen::VectorXd w = Eigen::VectorXd::Constant(
      data.n, std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i < data.n; ++i) {
    if (!data.fully_observed(i)) continue;
    double weight = 1.0;
    for (int t = 1; t <= data.T; ++t) {
      const int z = data.treatments(i, t - 1);
      const double pd = std::clamp(
          expit(compdetail::denom_row(data, i, t)
                    .dot(model.denominator[t - 1].coef)),
          eps, 1.0 - eps);
      const double p_obs = z == 1 ? pd : 1.0 - pd;
      weight /= p_obs;
      if (mode != IpwMode::Standard) {
        const double pn = std::clamp(
            expit(compdetail::numer_row(data, i, t)
                      .dot(model.numerator[t - 1].coef)),
            eps, 1.0 - eps);
        weight *= z == 1 ? pn : 1.0 - pn;
      }
    }
    w(i) = weight;
  }
  if (mode == IpwMode::Truncated) {
    std::vector<double> vals;
    for (int i = 0; i < data.n; ++i)
      if (std::isfinite(w(i))) vals.push_back(w(i));
    const double cap = quantile_type7(vals, truncation_quantile);
    for (int i = 0; i < data.n; ++i)
      if (std::isfinite(w(i))) w(i) = std::min(w(i), cap);
  }
  return w;
}

// Weighted least squares of the observed outcome on MSM design rows built
// from each unit's own treatment path.
inline Eigen::VectorXd ipw_msm(const PanelDataset& data,
                               const Eigen::VectorXd& weights,
                               const MsmDesign& design) {
  std::vector<int> idx;
  for (int i = 0; i < data.n; ++i)
    if (data.fully_observed(i) && std::isfinite(weights(i))) idx.push_back(i);
  const int n = static_cast<int>(idx.size());
  const int p = design.cols();
  if (n < p) throw FitError("too few complete cases for the MSM design");
  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n), w(n);
  for (int r = 0; r < n; ++r) {
    const int i = idx[r];
    X.row(r) = design.row({data.T, data.path_prefix(i, data.T)});
    y(r) = data.outcome(i);
    w(r) = weights(i);
    if (w(r) <= 0) throw FitError("IPW weights must be positive");
  }
  Eigen::VectorXd sw = w.array().sqrt();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sw.asDiagonal() * X);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    const auto perm = qr.colsPermutation().indices();
    std::string cols;
    const auto names = design.labels();
    for (int j = qr.rank(); j < p; ++j) {
      if (!cols.empty()) cols += ", ";
      cols += names[perm(j)];
    }
    throw FitError("IPW MSM design is rank deficient; collinear columns: " +
                   cols);
  }
  return qr.solve(sw.asDiagonal() * y);
}

enum class IceMode { Pooled, Stratified };

// Iterated conditional expectations for one target path.  Backward from
// Q_{T+1} = Y: pooled mode regresses on the covariate history plus z terms
// over all units and predicts at the target prefix; stratified mode fits
// within the units whose prefix matches the target.  The estimate is the
// plain average of the final predictions.
inline double gcomp_ice(const PanelDataset& data, const TreatmentPath& target,
                        IceMode mode) {
  const int n = data.n;
  std::vector<int> complete;
  for (int i = 0; i < n; ++i)
    if (data.fully_observed(i)) complete.push_back(i);

  auto history_width = [&](int t) {
    int w = 0;
    for (int s = 1; s <= t; ++s) w += data.dim(s);
    return w;
  };
  auto design_row = [&](int i, int t, bool with_z,
                        const std::uint32_t* forced_prefix) {
    const int hw = history_width(t);
    Eigen::RowVectorXd r(1 + hw + (with_z ? t : 0));
    int off = 0;
    r(off++) = 1.0;
    for (int s = 1; s <= t; ++s)
      for (int p = 0; p < data.dim(s); ++p)
        r(off++) = data.covariates[s - 1](i, p);
    if (with_z)
      for (int s = 1; s <= t; ++s) {
        const int z = forced_prefix ? static_cast<int>((*forced_prefix >> (s - 1)) & 1u)
                                    : data.treatments(i, s - 1);
        r(off++) = z;
      }
    return r;
  };

  Eigen::VectorXd q = Eigen::VectorXd::Zero(n);
  for (int i : complete) q(i) = data.outcome(i);
  std::vector<int> fit_set = complete;

  for (int t = data.T; t >= 1; --t) {
    const bool with_z = mode == IceMode::Pooled;
    std::vector<int> rows;
    if (mode == IceMode::Stratified) {
      const std::uint32_t prefix = target.prefix(t);
      for (int i : fit_set)
        if (!data.censored_at(i, t) && data.path_prefix(i, t) == prefix)
          rows.push_back(i);
    } else {
      for (int i : fit_set)
        if (!data.censored_at(i, t)) rows.push_back(i);
    }
    const int width =
        1 + history_width(t) + (with_z ? t : 0);
    if (static_cast<int>(rows.size()) < 1)
      throw FitError("empty regression stratum for path " + target.label() +
                     " at t=" + std::to_string(t));
    Eigen::MatrixXd X(rows.size(), width);
    Eigen::VectorXd y(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      X.row(static_cast<int>(r)) = design_row(rows[r], t, with_z, nullptr);
      y(static_cast<int>(r)) = q(rows[r]);
    }
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X);
    Eigen::VectorXd beta = cod.solve(y);

    // Predict Q_t for every unit with an observed X_t history, forcing the
    // treatment prefix to the target in pooled mode.
    const std::uint32_t forced = target.prefix(t);
    Eigen::VectorXd qn = Eigen::VectorXd::Zero(n);
    std::vector<int> next_set;
    for (int i = 0; i < n; ++i) {
      if (data.censored_at(i, t - 1)) continue;
      qn(i) = design_row(i, t, with_z, &forced).dot(beta);
      next_set.push_back(i);
    }
    q = qn;
    fit_set = next_set;
  }

  double s = 0;
  for (int i : fit_set) s += q(i);
  return s / static_cast<double>(fit_set.size());
}

// Plain per-path outcome averages over complete cases.
inline std::map<std::uint32_t, double> unadjusted_means(
    const PanelDataset& data) {
  std::map<std::uint32_t, std::pair<double, int>> acc;
  for (int i = 0; i < data.n; ++i) {
    if (!data.fully_observed(i)) continue;
    auto& slot = acc[data.path_prefix(i, data.T)];
    slot.first += data.outcome(i);
    slot.second += 1;
  }
  std::map<std::uint32_t, double> out;
  for (const auto& [code, sums] : acc) out[code] = sums.first / sums.second;
  return out;
}

}  // namespace bao
