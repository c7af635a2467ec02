#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "bao/comparators.hpp"
#include "bao/estimate.hpp"
#include "bao/parallel.hpp"
#include "bao/rng.hpp"

namespace bao {

inline int study_periods(int study) { return study == 2 ? 3 : 2; }

// Normal(a, b) in the study definitions is read as mean a, variance b.
inline double study_noise_sd(int study) { return study == 3 ? 1.0 : 5.0; }

inline MsmDesign study_design(int study) {
  return MsmDesign::named(study == 2 ? "cumulative" : "additive",
                          study_periods(study));
}

namespace simdetail {

inline void finish_ids(PanelDataset* d) {
  d->ids.resize(d->n);
  for (int i = 0; i < d->n; ++i) d->ids[i] = std::to_string(i + 1);
}

inline double clamp_term(double bound, double v) {
  return std::min(bound, std::max(-bound, v));
}

}  // namespace simdetail

// Four continuous covariates whose second-period scale shifts with the
// first treatment; treatment depends on current covariates and the last
// treatment; linear outcome.
inline PanelDataset gen_study1(int n, RngStream stream, double noise_sd = 5.0) {
  PanelDataset d;
  d.n = n;
  d.T = 2;
  d.covariates = {Eigen::MatrixXd(n, 4), Eigen::MatrixXd(n, 4)};
  d.treatments.resize(n, 2);
  d.outcome.resize(n);
  RngStream sx = stream.child("x0");
  RngStream sz = stream.child("z");
  RngStream se = stream.child("eps");
  for (int i = 0; i < n; ++i) {
    double z_prev = 0.0;
    double cov_sum = 0.0;
    for (int t = 1; t <= 2; ++t) {
      const double u = t == 1 ? 1.0 : (2.0 * z_prev + 5.0) / 3.0;
      double x[4];
      for (int p = 0; p < 4; ++p) x[p] = sx.normal();
      x[0] *= u;
      x[1] *= u;
      x[2] = std::abs(u * x[2]);
      x[3] = std::abs(u * x[3]);
      for (int p = 0; p < 4; ++p) d.covariates[t - 1](i, p) = x[p];
      const double lin = -z_prev + x[0] - 0.5 * x[1] + 0.25 * x[2] +
                         0.1 * x[3] + std::pow(-0.5, t);
      const int z = sz.bernoulli(expit(lin));
      d.treatments(i, t - 1) = z;
      z_prev = z;
      cov_sum += 27.4 * x[0] + 13.7 * (x[1] + x[2] + x[3]);
    }
    d.outcome(i) = 250.0 - 10.0 * (d.treatments(i, 0) + d.treatments(i, 1)) +
                   cov_sum + noise_sd * se.normal();
  }
  simdetail::finish_ids(&d);
  return d;
}

// Three periods; covariates accumulate with clamped innovations and a unit
// bump from the previous treatment; only the third-period covariates and a
// latent uniform enter the outcome.
inline PanelDataset gen_study2(int n, RngStream stream, double noise_sd = 5.0) {
  PanelDataset d;
  d.n = n;
  d.T = 3;
  d.covariates = {Eigen::MatrixXd(n, 4), Eigen::MatrixXd(n, 4),
                  Eigen::MatrixXd(n, 4)};
  d.treatments.resize(n, 3);
  d.outcome.resize(n);
  RngStream su = stream.child("u");
  RngStream sx = stream.child("x0");
  RngStream sz = stream.child("z");
  RngStream se = stream.child("eps");
  for (int i = 0; i < n; ++i) {
    const double u = su.uniform(1.0, 5.0);
    double x[4] = {0, 0, 0, 0};
    double z_prev = 0.0;
    for (int t = 1; t <= 3; ++t) {
      double v[4];
      for (int p = 0; p < 4; ++p) v[p] = sx.normal() / u;
      if (t == 1) {
        x[0] = v[0];
        x[1] = v[1];
        x[2] = std::abs(v[2]);
        x[3] = std::abs(v[3]);
      } else {
        x[0] = x[0] + v[0] + z_prev;
        x[1] = x[1] + v[1] + z_prev;
        x[2] = x[2] + simdetail::clamp_term(x[2], v[2]) + z_prev;
        x[3] = x[3] + simdetail::clamp_term(x[3], v[3]) + z_prev;
      }
      for (int p = 0; p < 4; ++p) d.covariates[t - 1](i, p) = x[p];
      const double lin = -z_prev + x[0] - 0.5 * x[1] + 0.25 * x[2] +
                         0.1 * x[3] + std::pow(-0.5, t);
      const int z = sz.bernoulli(expit(lin));
      d.treatments(i, t - 1) = z;
      z_prev = z;
    }
    d.outcome(i) = 250.0 - 10.0 * (d.treatments(i, 0) + d.treatments(i, 1)) +
                   58.5 * d.treatments(i, 2) + 27.4 * x[0] +
                   13.7 * (x[1] + x[2] + x[3]) + u + noise_sd * se.normal();
  }
  simdetail::finish_ids(&d);
  return d;
}

// Correlated normals, a chi-square chain, a binary covariate; the outcome
// is a sum of squares, so linear working models are misspecified and the
// treatments never enter.
inline PanelDataset gen_study3(int n, RngStream stream, double noise_sd = 1.0) {
  PanelDataset d;
  d.n = n;
  d.T = 2;
  d.covariates = {Eigen::MatrixXd(n, 4), Eigen::MatrixXd(n, 4)};
  d.treatments.resize(n, 2);
  d.outcome.resize(n);
  RngStream sx = stream.child("x");
  RngStream sz = stream.child("z");
  RngStream se = stream.child("eps");
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  for (int i = 0; i < n; ++i) {
    const double a = sx.normal();
    const double b = sx.normal();
    const double x11 = std::numbers::sqrt2 * a;
    const double x12 = (a + b) * inv_sqrt2;  // cov(x11, x12) = 1
    const double x13 = [&] {
      const double g = sx.normal();
      return g * g;
    }();
    const double x14 = sx.bernoulli(0.5);
    d.covariates[0].row(i) << x11, x12, x13, x14;
    const int z1 = sz.bernoulli(expit(x11 + 2 * x12 - 0.5 * x13 + x14));
    d.treatments(i, 0) = z1;

    const double x21 = x11 + 0.1 + sx.normal();
    const double x22 = x12 + 0.1 + sx.normal();
    const double nc = sx.normal() + std::sqrt(x13);  // chi2_1(x13)
    const double x23 = nc * nc;
    const double x24 = sx.bernoulli(expit(x14));
    d.covariates[1].row(i) << x21, x22, x23, x24;
    const int z2 =
        sz.bernoulli(expit(2 * z1 + x21 + 2 * x22 - 0.5 * x23 + x24));
    d.treatments(i, 1) = z2;

    const double s1 = x11 + x12 + x13;
    const double s2 = x21 + x22 + x23;
    d.outcome(i) = s1 * s1 + s2 * s2 + noise_sd * se.normal();
  }
  simdetail::finish_ids(&d);
  return d;
}

inline PanelDataset gen_study(int study, int n, RngStream stream) {
  switch (study) {
    case 1: return gen_study1(n, stream, study_noise_sd(1));
    case 2: return gen_study2(n, stream, study_noise_sd(2));
    case 3: return gen_study3(n, stream, study_noise_sd(3));
  }
  throw std::invalid_argument("study must be 1, 2, or 3");
}

inline RngStream replicate_stream(std::uint64_t seed, int study, int n,
                                  int replicate) {
  return RngStream(seed)
      .child("data")
      .child(static_cast<std::uint64_t>(study))
      .child(static_cast<std::uint64_t>(n))
      .child(static_cast<std::uint64_t>(replicate));
}

// Mean potential outcomes per treatment path under forced assignment,
// estimated with common random numbers across paths.  The zero-mean
// outcome noise is omitted.
inline std::vector<double> forced_path_means(int study, long draws,
                                             std::uint64_t seed,
                                             unsigned threads = 1,
                                             double* max_se = nullptr) {
  const int T = study_periods(study);
  const int n_paths = 1 << T;
  constexpr int kChunks = 64;  // fixed so results ignore the thread count
  std::vector<Eigen::VectorXd> sums(kChunks), sumsqs(kChunks);
  const long per_chunk = (draws + kChunks - 1) / kChunks;

  parallel_for(
      kChunks,
      [&](std::size_t chunk) {
        RngStream stream = RngStream(seed)
                               .child("oracle")
                               .child(static_cast<std::uint64_t>(study))
                               .child(static_cast<std::uint64_t>(chunk));
        RngStream su = stream.child("u");
        RngStream sx = stream.child("x");
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(n_paths);
        Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(n_paths);
        const long lo = static_cast<long>(chunk) * per_chunk;
        const long hi = std::min(draws, lo + per_chunk);
        for (long d = lo; d < hi; ++d) {
          if (study == 2) {
            const double u = su.uniform(1.0, 5.0);
            double v[3][4];
            for (int t = 0; t < 3; ++t)
              for (int p = 0; p < 4; ++p) v[t][p] = sx.normal() / u;
            for (int code = 0; code < n_paths; ++code) {
              double x[4] = {v[0][0], v[0][1], std::abs(v[0][2]),
                             std::abs(v[0][3])};
              for (int t = 2; t <= 3; ++t) {
                const double zp = (code >> (t - 2)) & 1;
                x[0] = x[0] + v[t - 1][0] + zp;
                x[1] = x[1] + v[t - 1][1] + zp;
                x[2] = x[2] + simdetail::clamp_term(x[2], v[t - 1][2]) + zp;
                x[3] = x[3] + simdetail::clamp_term(x[3], v[t - 1][3]) + zp;
              }
              const double z1 = code & 1, z2 = (code >> 1) & 1,
                           z3 = (code >> 2) & 1;
              const double y = 250.0 - 10.0 * (z1 + z2) + 58.5 * z3 +
                               27.4 * x[0] + 13.7 * (x[1] + x[2] + x[3]) + u;
              sum(code) += y;
              sumsq(code) += y * y;
            }
          } else if (study == 3) {
            const double a = sx.normal();
            const double b = sx.normal();
            const double x11 = std::numbers::sqrt2 * a;
            const double x12 = (a + b) / std::numbers::sqrt2;
            const double g = sx.normal();
            const double x13 = g * g;
            const double x21 = x11 + 0.1 + sx.normal();
            const double x22 = x12 + 0.1 + sx.normal();
            const double nc = sx.normal() + std::sqrt(x13);
            const double x23 = nc * nc;
            const double s1 = x11 + x12 + x13;
            const double s2 = x21 + x22 + x23;
            const double y = s1 * s1 + s2 * s2;  // paths never enter
            for (int code = 0; code < n_paths; ++code) {
              sum(code) += y;
              sumsq(code) += y * y;
            }
          } else {
            double x0[2][4];
            for (int t = 0; t < 2; ++t)
              for (int p = 0; p < 4; ++p) x0[t][p] = sx.normal();
            for (int code = 0; code < n_paths; ++code) {
              const double z1 = code & 1, z2 = (code >> 1) & 1;
              double y = 250.0 - 10.0 * (z1 + z2);
              for (int t = 1; t <= 2; ++t) {
                const double u = t == 1 ? 1.0 : (2.0 * z1 + 5.0) / 3.0;
                y += 27.4 * u * x0[t - 1][0] + 13.7 * u * x0[t - 1][1] +
                     13.7 * std::abs(u * x0[t - 1][2]) +
                     13.7 * std::abs(u * x0[t - 1][3]);
              }
              sum(code) += y;
              sumsq(code) += y * y;
            }
          }
        }
        sums[chunk] = sum;
        sumsqs[chunk] = sumsq;
      },
      threads);

  Eigen::VectorXd total = Eigen::VectorXd::Zero(n_paths);
  Eigen::VectorXd total_sq = Eigen::VectorXd::Zero(n_paths);
  for (int c = 0; c < kChunks; ++c) {
    total += sums[c];
    total_sq += sumsqs[c];
  }
  std::vector<double> means(n_paths);
  double worst_se = 0;
  for (int code = 0; code < n_paths; ++code) {
    means[code] = total(code) / static_cast<double>(draws);
    const double var =
        total_sq(code) / static_cast<double>(draws) - means[code] * means[code];
    worst_se = std::max(worst_se, std::sqrt(std::max(var, 0.0) /
                                            static_cast<double>(draws)));
  }
  if (max_se) *max_se = worst_se;
  return means;
}

struct TruthOracle {
  Eigen::VectorXd tau;
  std::vector<std::string> names;
  double mc_se = 0.0;  // worst per-path standard error; 0 for closed form
  long draws = 0;
};

// True MSM parameters.  Study 1 is closed form through the half-normal
// mean; Studies 2 and 3 regress forced-path Monte Carlo means on the true
// design with equal path weights.
inline TruthOracle true_params(int study, long draws = 10'000'000,
                               std::uint64_t seed = 20240901,
                               unsigned threads = 1) {
  TruthOracle oracle;
  const MsmDesign design = study_design(study);
  oracle.names = design.labels();
  if (study == 1) {
    // Per period the covariate terms contribute 13.7 * 2 * E|N(0,1)| * U_t,
    // with U_1 = 1 and U_2 = (2 z_1 + 5) / 3.
    const double half_normal_mean = std::sqrt(2.0 / std::numbers::pi);
    const double per_period = 13.7 * 2.0 * half_normal_mean;
    oracle.tau = Eigen::Vector3d(250.0 + per_period * (1.0 + 5.0 / 3.0),
                                 -10.0 + per_period * (2.0 / 3.0), -10.0);
    return oracle;
  }
  double max_se = 0;
  const auto means = forced_path_means(study, draws, seed, threads, &max_se);
  const int n_paths = static_cast<int>(means.size());
  std::vector<double> y(means);
  std::vector<double> w(n_paths, 1.0);
  std::vector<TreatmentPath> paths;
  for (int code = 0; code < n_paths; ++code)
    paths.push_back({design.T, static_cast<std::uint32_t>(code)});
  MsmFit fit = fit_msm(y, w, paths, design);
  oracle.tau = fit.coef;
  oracle.mc_se = max_se;
  oracle.draws = draws;
  return oracle;
}

// ---- Estimator registry and the replication benchmark -----------------

struct MethodConfig {
  int bootstrap = 100;
  TuningConfig tuning;
  SolverOptions solver;
  unsigned threads = 1;
};

struct MethodOutcome {
  bool ok = false;
  std::string error;
  Eigen::VectorXd coef;
  Eigen::VectorXd ci_lo;
  Eigen::VectorXd ci_hi;
  std::vector<PathWeights> weights;  // empty for non-weighting estimators
};

using Estimator =
    std::function<MethodOutcome(const PanelDataset&, const MsmDesign&,
                                const MethodConfig&, RngStream)>;

namespace simdetail {

inline std::vector<PathWeights> unit_weights_by_path(
    const PanelDataset& data, const PathStrata& strata,
    const Eigen::VectorXd& unit_weights) {
  std::vector<PathWeights> out;
  for (const auto& path : strata.realized_paths()) {
    PathWeights pw;
    pw.path = path;
    pw.members = strata.members(data.T, path.code);
    pw.weights.resize(static_cast<int>(pw.members.size()));
    double total = 0;
    for (std::size_t j = 0; j < pw.members.size(); ++j)
      total += (pw.weights(static_cast<int>(j)) = unit_weights(pw.members[j]));
    if (total > 0) pw.weights /= total;
    out.push_back(std::move(pw));
  }
  return out;
}

// Percentile-bootstrap wrapper shared by the comparison estimators.
inline MethodOutcome bootstrap_comparator(
    const PanelDataset& data, const MsmDesign& design, int B, RngStream stream,
    const std::function<Eigen::VectorXd(const PanelDataset&)>& point) {
  MethodOutcome out;
  out.coef = point(data);
  const int p = static_cast<int>(out.coef.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.ci_lo = Eigen::VectorXd::Constant(p, nan);
  out.ci_hi = Eigen::VectorXd::Constant(p, nan);
  if (B > 0) {
    RngStream boot = stream.child("boot");
    std::vector<Eigen::VectorXd> draws;
    long attempt = 0;
    const long cap = 10L * B;
    while (static_cast<int>(draws.size()) < B && attempt < cap) {
      RngStream s = boot.child(static_cast<std::uint64_t>(attempt));
      ++attempt;
      std::vector<int> picks(data.n);
      for (int i = 0; i < data.n; ++i)
        picks[i] = static_cast<int>(s.below(data.n));
      std::sort(picks.begin(), picks.end());
      try {
        draws.push_back(point(resample_units(data, picks)));
      } catch (const std::exception&) {
        continue;
      }
    }
    for (int j = 0; j < p; ++j) {
      std::vector<double> vals;
      vals.reserve(draws.size());
      for (const auto& d : draws) vals.push_back(d(j));
      if (!vals.empty()) {
        out.ci_lo(j) = quantile_type7(vals, 0.025);
        out.ci_hi(j) = quantile_type7(vals, 0.975);
      }
    }
  }
  out.ok = true;
  return out;
}

inline Eigen::VectorXd gcomp_point(const PanelDataset& data,
                                   const MsmDesign& design, IceMode mode) {
  PathStrata strata = build_strata(data);
  std::vector<double> means, prev;
  std::vector<TreatmentPath> paths;
  for (const auto& path : strata.realized_paths()) {
    means.push_back(gcomp_ice(data, path, mode));
    prev.push_back(strata.prevalence(path.code));
    paths.push_back(path);
  }
  return fit_msm(means, prev, paths, design).coef;
}

}  // namespace simdetail

inline Estimator make_bao_estimator() {
  return [](const PanelDataset& data, const MsmDesign& design,
            const MethodConfig& mcfg, RngStream stream) {
    MethodOutcome out;
    try {
      BaoConfig cfg;
      cfg.tuning = mcfg.tuning;
      cfg.bootstrap = mcfg.bootstrap;
      cfg.solver = mcfg.solver;
      cfg.threads = mcfg.threads;
      cfg.seed = stream.child("cfg").next_u64();
      BalanceSpec spec = BalanceSpec::identity(data);
      BaoResult result = run_bao(data, spec, design, cfg);
      out.coef = result.msm->coef;
      out.ci_lo = result.msm->ci_lo;
      out.ci_hi = result.msm->ci_hi;
      out.weights = result.weights;
      out.ok = true;
    } catch (const std::exception& e) {
      out.error = e.what();
    }
    return out;
  };
}

inline Estimator make_ipw_estimator(IpwMode mode) {
  return [mode](const PanelDataset& data, const MsmDesign& design,
                const MethodConfig& mcfg, RngStream stream) {
    MethodOutcome out;
    try {
      auto point = [&, mode](const PanelDataset& d) {
        PropensityModel model = fit_propensity(d);
        return ipw_msm(d, ipw_weights(d, model, mode), design);
      };
      out = simdetail::bootstrap_comparator(data, design, mcfg.bootstrap,
                                            stream, point);
      PropensityModel model = fit_propensity(data);
      Eigen::VectorXd w = ipw_weights(data, model, mode);
      out.weights =
          simdetail::unit_weights_by_path(data, build_strata(data), w);
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
    }
    return out;
  };
}

inline Estimator make_unadjusted_estimator() {
  return [](const PanelDataset& data, const MsmDesign& design,
            const MethodConfig& mcfg, RngStream stream) {
    MethodOutcome out;
    try {
      auto point = [&](const PanelDataset& d) {
        return ipw_msm(d, Eigen::VectorXd::Ones(d.n), design);
      };
      out = simdetail::bootstrap_comparator(data, design, mcfg.bootstrap,
                                            stream, point);
      out.weights = simdetail::unit_weights_by_path(
          data, build_strata(data), Eigen::VectorXd::Ones(data.n));
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
    }
    return out;
  };
}

inline Estimator make_gcomp_estimator(IceMode mode) {
  return [mode](const PanelDataset& data, const MsmDesign& design,
                const MethodConfig& mcfg, RngStream stream) {
    MethodOutcome out;
    try {
      auto point = [&, mode](const PanelDataset& d) {
        return simdetail::gcomp_point(d, design, mode);
      };
      out = simdetail::bootstrap_comparator(data, design, mcfg.bootstrap,
                                            stream, point);
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
    }
    return out;
  };
}

inline std::map<std::string, Estimator> default_estimators() {
  return {{"bao", make_bao_estimator()},
          {"gpool", make_gcomp_estimator(IceMode::Pooled)},
          {"gstrat", make_gcomp_estimator(IceMode::Stratified)},
          {"lr", make_ipw_estimator(IpwMode::Standard)},
          {"lr-stab", make_ipw_estimator(IpwMode::Stabilized)},
          {"lr-trunc", make_ipw_estimator(IpwMode::Truncated)},
          {"unadj", make_unadjusted_estimator()}};
}

struct StudyConfig {
  int study = 1;
  int n = 500;
  int replicates = 10;
  std::uint64_t seed = 0;
  std::vector<std::string> methods = {"bao"};
  MethodConfig method;
  long oracle_draws = 10'000'000;
  unsigned threads = 1;

  void check() const {
    if (study < 1 || study > 3)
      throw std::invalid_argument("study must be 1, 2, or 3");
    if (n < 50) throw std::invalid_argument("n must be at least 50");
    if (replicates < 1)
      throw std::invalid_argument("replicate count must be positive");
  }
};

struct MetricRow {
  std::string method;
  std::string parameter;
  double bias = 0.0;
  double rmse = 0.0;
  double coverage = std::numeric_limits<double>::quiet_NaN();  // percent
  double length = std::numeric_limits<double>::quiet_NaN();
  int failures = 0;
};

struct DiagnosticRow {
  std::string method;
  std::string path;
  double pre_asmd = 0.0;   // replicate means over covariate cells
  double post_asmd = 0.0;
  double cv = 0.0;
  int replicates = 0;
};

struct ReplicationReport {
  StudyConfig config;
  TruthOracle truth;
  std::vector<MetricRow> rows;
  std::vector<DiagnosticRow> diagnostics;
  double wall_seconds = 0.0;
};

// Figure-2-style cells for one replicate: raw-covariate ASMD and weight CV
// per path under the supplied weights.
struct PathDiag {
  std::string path;
  double pre_asmd = 0.0;
  double post_asmd = 0.0;
  double cv = 0.0;
};

inline std::vector<PathDiag> imbalance_and_cv(
    const PanelDataset& data, const std::vector<PathWeights>& weights) {
  PathStrata strata = build_strata(data);
  std::vector<std::vector<std::string>> labels(data.T);
  for (int t = 1; t <= data.T; ++t)
    for (int p = 1; p <= data.dim(t); ++p)
      labels[t - 1].push_back("x" + std::to_string(t) + "_" +
                              std::to_string(p));
  BalanceTable table = asmd_table(data.covariates, labels, strata, weights);
  std::vector<PathDiag> out;
  for (const auto& pw : weights) {
    PathDiag d;
    d.path = pw.path.label();
    d.cv = weight_summary(pw.weights).cv;
    int cells = 0;
    for (const auto& row : table.rows)
      if (row.path == pw.path) {
        d.pre_asmd += row.pre_asmd;
        d.post_asmd += row.post_asmd;
        ++cells;
      }
    if (cells > 0) {
      d.pre_asmd /= cells;
      d.post_asmd /= cells;
    }
    out.push_back(std::move(d));
  }
  return out;
}

inline ReplicationReport run_replications(
    const StudyConfig& cfg,
    const std::map<std::string, Estimator>& registry = default_estimators()) {
  cfg.check();
  const auto t0 = std::chrono::steady_clock::now();
  ReplicationReport report;
  report.config = cfg;
  report.truth = true_params(cfg.study, cfg.oracle_draws, 20240901, cfg.threads);
  const MsmDesign design = study_design(cfg.study);
  const int p = design.cols();

  for (const auto& name : cfg.methods)
    if (registry.find(name) == registry.end())
      throw std::invalid_argument("unknown method '" + name + "'");

  struct ReplicateSlot {
    std::vector<MethodOutcome> outcomes;
    std::vector<std::vector<PathDiag>> diags;
  };
  std::vector<ReplicateSlot> slots(cfg.replicates);

  parallel_for(
      static_cast<std::size_t>(cfg.replicates),
      [&](std::size_t r) {
        PanelDataset data = gen_study(
            cfg.study, cfg.n,
            replicate_stream(cfg.seed, cfg.study, cfg.n, static_cast<int>(r)));
        ReplicateSlot& slot = slots[r];
        for (const auto& name : cfg.methods) {
          RngStream method_stream = RngStream(cfg.seed)
                                        .child("method")
                                        .child(name)
                                        .child(static_cast<std::uint64_t>(r));
          MethodOutcome outcome =
              registry.at(name)(data, design, cfg.method, method_stream);
          if (outcome.ok && !outcome.weights.empty())
            slot.diags.push_back(imbalance_and_cv(data, outcome.weights));
          else
            slot.diags.push_back({});
          slot.outcomes.push_back(std::move(outcome));
        }
      },
      cfg.threads);

  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const auto& name = cfg.methods[mi];
    std::vector<std::vector<double>> estimates(p);
    std::vector<std::vector<double>> lengths(p);
    std::vector<int> covered(p, 0), with_ci(p, 0);
    int failures = 0;
    for (int r = 0; r < cfg.replicates; ++r) {
      const MethodOutcome& o = slots[r].outcomes[mi];
      if (!o.ok) {
        ++failures;
        continue;
      }
      for (int j = 0; j < p; ++j) {
        estimates[j].push_back(o.coef(j));
        if (std::isfinite(o.ci_lo(j)) && std::isfinite(o.ci_hi(j))) {
          ++with_ci[j];
          lengths[j].push_back(o.ci_hi(j) - o.ci_lo(j));
          if (o.ci_lo(j) <= report.truth.tau(j) &&
              report.truth.tau(j) <= o.ci_hi(j))
            ++covered[j];
        }
      }
    }
    const auto names = design.labels();
    for (int j = 0; j < p; ++j) {
      MetricRow row;
      row.method = name;
      row.parameter = names[j];
      row.failures = failures;
      if (!estimates[j].empty()) {
        const double truth = report.truth.tau(j);
        double se = 0, sse = 0;
        for (double v : estimates[j]) {
          se += v - truth;
          sse += (v - truth) * (v - truth);
        }
        row.bias = se / static_cast<double>(estimates[j].size());
        row.rmse = std::sqrt(sse / static_cast<double>(estimates[j].size()));
      }
      if (with_ci[j] > 0) {
        row.coverage = 100.0 * covered[j] / static_cast<double>(with_ci[j]);
        row.length = mean_of(lengths[j]);
      }
      report.rows.push_back(std::move(row));
    }

    // Figure-2 aggregation over replicates.
    std::map<std::string, DiagnosticRow> agg;
    for (int r = 0; r < cfg.replicates; ++r)
      for (const auto& d : slots[r].diags[mi]) {
        DiagnosticRow& row = agg[d.path];
        row.method = name;
        row.path = d.path;
        row.pre_asmd += d.pre_asmd;
        row.post_asmd += d.post_asmd;
        row.cv += d.cv;
        row.replicates += 1;
      }
    for (auto& [path, row] : agg) {
      row.pre_asmd /= row.replicates;
      row.post_asmd /= row.replicates;
      row.cv /= row.replicates;
      report.diagnostics.push_back(row);
    }
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return report;
}

inline void write_report_csv(const ReplicationReport& report,
                             std::ostream& out) {
  out << "study,n,method,parameter,bias,rmse,coverage,length,failures\n";
  for (const auto& row : report.rows)
    out << report.config.study << "," << report.config.n << "," << row.method
        << "," << row.parameter << "," << format_double(row.bias) << ","
        << format_double(row.rmse) << "," << format_double(row.coverage)
        << "," << format_double(row.length) << "," << row.failures << "\n";
}

// Minimal ASMD-vs-CV scatter, one dot per (method, path).
inline void write_asmd_cv_svg(const ReplicationReport& report,
                              std::ostream& out) {
  const int W = 640, H = 480, margin = 60;
  double max_cv = 0.1, max_asmd = 0.1;
  for (const auto& d : report.diagnostics) {
    max_cv = std::max(max_cv, d.cv);
    max_asmd = std::max(max_asmd, d.post_asmd);
  }
  max_cv *= 1.1;
  max_asmd *= 1.1;
  const std::vector<std::string> palette = {"#1f77b4", "#d62728", "#2ca02c",
                                            "#9467bd", "#ff7f0e", "#8c564b",
                                            "#17becf"};
  std::map<std::string, std::string> color;
  for (const auto& d : report.diagnostics)
    if (!color.count(d.method))
      color[d.method] = palette[color.size() % palette.size()];

  auto sx = [&](double cv) {
    return margin + cv / max_cv * (W - 2 * margin);
  };
  auto sy = [&](double a) {
    return H - margin - a / max_asmd * (H - 2 * margin);
  };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
      << "\" height=\"" << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << H - margin << "\" x2=\""
      << W - margin << "\" y2=\"" << H - margin
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\""
      << margin << "\" y2=\"" << H - margin << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"" << H - 15
      << "\" text-anchor=\"middle\" font-size=\"14\">weight CV</text>\n";
  out << "<text x=\"18\" y=\"" << H / 2
      << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 "
         "18 "
      << H / 2 << ")\">post-weighting ASMD</text>\n";
  // 0.2 reference line for the balance threshold.
  if (max_asmd > 0.2) {
    out << "<line x1=\"" << margin << "\" y1=\"" << sy(0.2) << "\" x2=\""
        << W - margin << "\" y2=\"" << sy(0.2)
        << "\" stroke=\"gray\" stroke-dasharray=\"4\"/>\n";
  }
  for (const auto& d : report.diagnostics) {
    out << "<circle cx=\"" << sx(d.cv) << "\" cy=\"" << sy(d.post_asmd)
        << "\" r=\"5\" fill=\"" << color[d.method]
        << "\" fill-opacity=\"0.8\"><title>" << d.method << " path "
        << d.path << "</title></circle>\n";
  }
  int ly = margin;
  for (const auto& [method, c] : color) {
    out << "<circle cx=\"" << W - margin + 20 << "\" cy=\"" << ly
        << "\" r=\"5\" fill=\"" << c << "\"/>\n";
    out << "<text x=\"" << W - margin + 30 << "\" y=\"" << ly + 4
        << "\" font-size=\"11\">" << method << "</text>\n";
    ly += 18;
  }
  out << "</svg>\n";
}

}  // namespace bao
