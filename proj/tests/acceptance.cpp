// Acceptance suite: exercises the full pipeline at desk scale and prints
// one PASS/FAIL line per criterion.  Exits nonzero if any line fails.
//
//  1. closed-form truth for the first study
//  2. Monte Carlo truth oracles for the second and third studies
//  3. first-study benchmark slice (n=1000, 300 replicates)
//  4. third-study benchmark slice (n=1000, 200 replicates)
//  5. weight-variability comparison against stabilized IPW
//  6. QP solver oracle suite
//  7. orthogonalization property suite
//  8. censoring reduction (bitwise)
//  9. CLI determinism (byte-identical payloads)

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "bao/comparators.hpp"
#include "bao/estimate.hpp"
#include "bao/simlab.hpp"
#include "grid_oracle.hpp"

using namespace bao;

namespace {

int g_failures = 0;

void line(const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << "\n"
            << std::flush;
  if (!pass) ++g_failures;
}

double elapsed(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(double v) { return format_double(v); }

unsigned threads() { return default_threads(); }

// ---------------------------------------------------------------- 1 ----
void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  TruthOracle oracle = true_params(1);
  const double dt = elapsed(t0);
  const bool pass = std::abs(oracle.tau(0) - 308.30) <= 0.01 &&
                    std::abs(oracle.tau(1) - 4.57) <= 0.01 &&
                    std::abs(oracle.tau(2) + 10.00) <= 0.01 && dt < 1.0;
  line("criterion 1 (study-1 closed-form truth)", pass,
       "tau = (" + fmt(oracle.tau(0)) + ", " + fmt(oracle.tau(1)) + ", " +
           fmt(oracle.tau(2)) + ") vs (308.30, 4.57, -10.00) +-0.01, " +
           fmt(dt) + " s");
}

// ---------------------------------------------------------------- 2 ----
void criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  TruthOracle s2 = true_params(2, 10000000, 20240901, threads());
  TruthOracle s3 = true_params(3, 10000000, 20240901, threads());
  const double dt = elapsed(t0);
  const bool pass2 = std::abs(s2.tau(0) - 261.80) <= 0.05 &&
                     std::abs(s2.tau(1) - 58.50) <= 0.05;
  const bool pass3 = std::abs(s3.tau(0) - 27.82) <= 0.05 &&
                     std::abs(s3.tau(1)) <= 0.05 && std::abs(s3.tau(2)) <= 0.05;
  line("criterion 2 (study-2/3 Monte Carlo truth oracles)", pass2 && pass3,
       "study 2 (" + fmt(s2.tau(0)) + ", " + fmt(s2.tau(1)) +
           ") vs (261.80, 58.50); study 3 (" + fmt(s3.tau(0)) + ", " +
           fmt(s3.tau(1)) + ", " + fmt(s3.tau(2)) +
           ") vs (27.82, 0, 0) +-0.05; " + fmt(dt) + " s");
}

const MetricRow& row_of(const ReplicationReport& rep, const std::string& method,
                        const std::string& param) {
  for (const auto& r : rep.rows)
    if (r.method == method && r.parameter == param) return r;
  throw std::runtime_error("missing row " + method + "/" + param);
}

// ---------------------------------------------------------------- 3 ----
void criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  StudyConfig cfg;
  cfg.study = 1;
  cfg.n = 1000;
  cfg.replicates = 300;
  cfg.seed = 20250810;
  cfg.methods = {"bao", "gpool"};
  cfg.method.bootstrap = 0;  // bias/RMSE only, no intervals assessed here
  cfg.threads = threads();
  ReplicationReport rep = run_replications(cfg);

  double gpool_worst = 0.0;
  for (const auto& p : {"intercept", "z1", "z2"})
    gpool_worst = std::max(gpool_worst, std::abs(row_of(rep, "gpool", p).bias));
  line("criterion 3a (g-pooled |bias| <= 0.3 on all parameters)",
       gpool_worst <= 0.3, "worst |bias| = " + fmt(gpool_worst));

  const MetricRow& bz2 = row_of(rep, "bao", "z2");
  line("criterion 3b (BAO tau2 bias in [0.3, 1.5])",
       bz2.bias >= 0.3 && bz2.bias <= 1.5, "bias = " + fmt(bz2.bias));
  line("criterion 3c (BAO tau2 RMSE in [0.7, 1.6])",
       bz2.rmse >= 0.7 && bz2.rmse <= 1.6, "rmse = " + fmt(bz2.rmse));
  const MetricRow& b0 = row_of(rep, "bao", "intercept");
  line("criterion 3d (BAO tau0 RMSE <= 4.5)", b0.rmse <= 4.5,
       "rmse = " + fmt(b0.rmse) + "; failures bao=" +
           std::to_string(bz2.failures) + " gpool=" +
           std::to_string(row_of(rep, "gpool", "z2").failures) + "; " +
           fmt(elapsed(t0)) + " s");
}

// ---------------------------------------------------------------- 4 ----
void criterion4() {
  const auto t0 = std::chrono::steady_clock::now();
  StudyConfig cfg;
  cfg.study = 3;
  cfg.n = 1000;
  cfg.replicates = 200;
  cfg.seed = 20250810;
  cfg.methods = {"bao", "gpool"};
  cfg.method.bootstrap = 100;
  cfg.threads = threads();
  ReplicationReport rep = run_replications(cfg);
  const MetricRow& bao = row_of(rep, "bao", "z2");
  const MetricRow& gp = row_of(rep, "gpool", "z2");
  line("criterion 4a (|BAO tau2 bias| < |g-pooled tau2 bias|)",
       std::abs(bao.bias) < std::abs(gp.bias),
       "bao " + fmt(bao.bias) + " vs gpool " + fmt(gp.bias));
  line("criterion 4b (BAO tau2 coverage >= 85%)", bao.coverage >= 85.0,
       "coverage = " + fmt(bao.coverage) + "%; " + fmt(elapsed(t0)) + " s");
}

// ---------------------------------------------------------------- 5 ----
void criterion5() {
  const auto t0 = std::chrono::steady_clock::now();
  StudyConfig cfg;
  cfg.study = 1;
  cfg.n = 1000;
  cfg.replicates = 100;
  cfg.seed = 20250810;
  cfg.methods = {"bao", "lr-stab"};
  cfg.method.bootstrap = 0;
  cfg.threads = threads();
  ReplicationReport rep = run_replications(cfg);
  bool pass = true;
  std::string detail;
  for (const auto& d : rep.diagnostics) {
    if (d.method != "bao") continue;
    for (const auto& e : rep.diagnostics) {
      if (e.method != "lr-stab" || e.path != d.path) continue;
      pass = pass && d.cv < e.cv;
      detail += d.path + ": " + fmt(d.cv) + "<" + fmt(e.cv) + " ";
    }
  }
  line("criterion 5 (BAO weight CV below stabilized IPW on every path)", pass,
       detail + fmt(elapsed(t0)) + " s");
}

// ---------------------------------------------------------------- 6 ----
void criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  std::string detail;

  // Closed-form instance.
  {
    QpProblem p;
    p.path = {1, 0};
    p.members = {0, 1, 2};
    p.A.resize(1, 3);
    p.A << 1, 0, -1;
    p.b = Eigen::VectorXd::Constant(1, 0.5);
    p.delta = Eigen::VectorXd::Zero(1);
    p.row_labels = {"r"};
    WeightSolution sol = solve_path(p);
    const bool ok = sol.status == SolveStatus::Optimal &&
                    std::abs(sol.weights(0) - 7.0 / 12) <= 1e-8 &&
                    std::abs(sol.weights(1) - 1.0 / 3) <= 1e-8 &&
                    std::abs(sol.weights(2) - 1.0 / 12) <= 1e-8 &&
                    sol.kkt.max() <= 1e-6;
    pass = pass && ok;
    detail += "closed-form " + std::string(ok ? "ok" : "BAD") + "; ";
  }

  // Uniform at infinite tolerance, exactly.
  {
    QpProblem p;
    p.path = {1, 0};
    p.members = {0, 1, 2, 3, 4};
    p.A.resize(1, 5);
    p.A << 1, 0, -1, 2, 3;
    p.b = Eigen::VectorXd::Zero(1);
    p.delta =
        Eigen::VectorXd::Constant(1, std::numeric_limits<double>::infinity());
    p.row_labels = {"r"};
    WeightSolution sol = solve_path(p);
    bool ok = sol.status == SolveStatus::Optimal;
    for (int i = 0; i < 5; ++i) ok = ok && sol.weights(i) == 0.2;
    pass = pass && ok;
    detail += "uniform " + std::string(ok ? "ok" : "BAD") + "; ";
  }

  // 100 randomized instances against the simplex grid oracle.
  RngStream rng(8675309);
  double worst_gap = 0.0, worst_kkt = 0.0;
  int done = 0;
  while (done < 100) {
    const int m = 2 + static_cast<int>(rng.below(5));
    const int K = 1 + static_cast<int>(rng.below(2));
    Eigen::MatrixXd A(K, m);
    for (int k = 0; k < K; ++k)
      for (int i = 0; i < m; ++i) A(k, i) = rng.uniform(-1, 1);
    Eigen::VectorXd w0(m);
    double tot = 0;
    for (int i = 0; i < m; ++i) tot += (w0(i) = -std::log(1 - rng.uniform()));
    w0 /= tot;
    Eigen::VectorXd b = A * w0;
    for (int k = 0; k < K; ++k) b(k) += rng.uniform(-0.08, 0.08);
    Eigen::VectorXd delta(K);
    for (int k = 0; k < K; ++k) delta(k) = rng.uniform(0.05, 0.25);
    QpProblem p;
    p.path = {1, 0};
    p.members.resize(m);
    for (int i = 0; i < m; ++i) p.members[i] = i;
    p.A = A;
    p.b = b;
    p.delta = delta;
    p.row_labels.assign(K, "r");
    WeightSolution sol = solve_path(p);
    if (sol.status != SolveStatus::Optimal) {
      pass = false;
      detail += "instance " + std::to_string(done) + " not optimal; ";
      ++done;
      continue;
    }
    worst_kkt = std::max(worst_kkt, sol.kkt.max());
    auto strict =
        grid_oracle::search(p.A, p.b, p.delta, 1e-3, Eigen::VectorXd::Zero(K));
    if (strict.found)
      worst_gap = std::max(worst_gap, sol.objective - strict.objective);
    else
      pass = false;
    ++done;
  }
  pass = pass && worst_gap <= 1e-4 && worst_kkt <= 1e-6;
  line("criterion 6 (QP solver oracle suite)", pass,
       detail + "100 instances, worst objective gap vs grid = " +
           fmt(worst_gap) + ", worst KKT = " + fmt(worst_kkt) + "; " +
           fmt(elapsed(t0)) + " s");
}

// ---------------------------------------------------------------- 7 ----
PanelDataset random_panel(int n, int T, int P, RngStream rng) {
  PanelDataset d;
  d.n = n;
  d.T = T;
  d.treatments = Eigen::MatrixXi::Zero(n, T);
  d.outcome = Eigen::VectorXd::Zero(n);
  for (int t = 0; t < T; ++t) d.covariates.emplace_back(n, P);
  for (int i = 0; i < n; ++i) {
    d.ids.push_back(std::to_string(i + 1));
    int zprev = 0;
    for (int t = 0; t < T; ++t) {
      for (int p = 0; p < P; ++p)
        d.covariates[t](i, p) = rng.normal() + 0.5 * zprev;
      const double lin = d.covariates[t](i, 0) - 0.3 * zprev;
      zprev = rng.bernoulli(1.0 / (1.0 + std::exp(-lin)));
      d.treatments(i, t) = zprev;
    }
    d.outcome(i) = rng.normal();
  }
  return d;
}

void criterion7() {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  double worst_center = 0, worst_orth = 0, worst_idem = 0, worst_affine = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    PanelDataset d = random_panel(60, 3, 2, RngStream(seed));
    PathStrata s = build_strata(d);
    FeatureMatrix f = apply_features(d, BalanceSpec::identity(d));
    ProjectionFit fits = fit_projections(f, s);
    ResidualSet res = compute_residuals(f, fits, s);
    for (int t = 2; t <= d.T; ++t)
      for (const auto& [prefix, idx] : s.levels[t - 1]) {
        if (idx.size() < 2) continue;
        for (int p = 0; p < res.cols(t); ++p) {
          const double sd = std::max(subset_sd(res.at(t), p, idx), 1e-12);
          worst_center = std::max(
              worst_center, std::abs(subset_mean(res.at(t), p, idx)) / sd);
        }
        for (int srow = 1; srow < t; ++srow)
          for (int ph = 0; ph < f.cols(srow); ++ph)
            for (int p = 0; p < res.cols(t); ++p) {
              double dot = 0, nh = 0, nr = 0;
              for (int i : idx) {
                dot += f.at(srow)(i, ph) * res.at(t)(i, p);
                nh += f.at(srow)(i, ph) * f.at(srow)(i, ph);
                nr += res.at(t)(i, p) * res.at(t)(i, p);
              }
              worst_orth = std::max(
                  worst_orth, std::abs(dot) / (std::sqrt(nh * nr) + 1e-12));
            }
      }
    FeatureMatrix fres = f;
    for (int t = 0; t < d.T; ++t) fres.blocks[t] = res.blocks[t];
    ProjectionFit refit = fit_projections(fres, s);
    for (const auto& [key, fit] : refit.fits)
      if (!fit.fallback_zero)
        worst_idem = std::max(worst_idem, fit.beta.cwiseAbs().maxCoeff());

    PanelDataset shifted = d;
    shifted.covariates[0].col(0).array() += 11.25;
    FeatureMatrix f2 = apply_features(shifted, BalanceSpec::identity(shifted));
    ResidualSet res2 = compute_residuals(f2, fit_projections(f2, s), s);
    for (int t = 2; t <= d.T; ++t)
      worst_affine = std::max(
          worst_affine, (res2.at(t) - res.at(t)).cwiseAbs().maxCoeff());
  }
  pass = worst_center <= 1e-8 && worst_orth <= 1e-8 && worst_idem <= 1e-8 &&
         worst_affine <= 1e-12;
  line("criterion 7 (orthogonalization property suite, 50 datasets)", pass,
       "centering " + fmt(worst_center) + ", orthogonality " +
           fmt(worst_orth) + ", idempotence " + fmt(worst_idem) +
           ", affine " + fmt(worst_affine) + "; " + fmt(elapsed(t0)) + " s");
}

// ---------------------------------------------------------------- 8 ----
void criterion8() {
  const auto t0 = std::chrono::steady_clock::now();
  PanelDataset d = gen_study1(300, RngStream(1234));
  PanelDataset with_c = d;
  with_c.censoring = Eigen::MatrixXi::Zero(d.n, d.T);
  BaoConfig cfg;
  cfg.tuning = {{0.01, 0.05}, 6};
  cfg.bootstrap = 10;
  cfg.seed = 77;
  cfg.threads = threads();
  BaoResult plain = run_bao(d, BalanceSpec::identity(d), study_design(1), cfg);
  BaoResult cens = run_bao_censored(with_c, BalanceSpec::identity(with_c),
                                    study_design(1), cfg);
  bool pass = plain.delta_star == cens.delta_star &&
              plain.msm->coef == cens.msm->coef &&
              plain.msm->se == cens.msm->se &&
              plain.msm->ci_lo == cens.msm->ci_lo &&
              plain.msm->ci_hi == cens.msm->ci_hi &&
              plain.paths.size() == cens.paths.size() &&
              plain.weights.size() == cens.weights.size();
  if (pass)
    for (std::size_t i = 0; i < plain.paths.size(); ++i) {
      pass = pass && plain.paths[i].mean == cens.paths[i].mean &&
             plain.weights[i].weights == cens.weights[i].weights;
    }
  line("criterion 8 (censoring reduction, C == 0, bitwise)", pass,
       std::string(pass ? "all payloads identical" : "payloads differ") +
           "; " + fmt(elapsed(t0)) + " s");
}

// ---------------------------------------------------------------- 9 ----
std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion9() {
  const auto t0 = std::chrono::steady_clock::now();
  const char* cli = std::getenv("BAO_CLI");
  if (!cli) {
    line("criterion 9 (CLI determinism)", false,
         "BAO_CLI not set; cannot locate the binary");
    return;
  }
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "bao_acceptance";
  fs::create_directories(dir);

  {
    std::ofstream out(dir / "panel.csv");
    save_panel(gen_study1(250, RngStream(42)), out);
  }
  auto run = [&](const std::string& args) {
    const std::string cmd = std::string(cli) + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };
  bool pass = true;
  std::string detail;

  const std::string sim_args =
      "simulate --study 1 --n 200 --reps 3 --seed 11 --methods unadj,gpool "
      "--bootstrap 4 --out ";
  pass &= run(sim_args + (dir / "r1.csv").string()) == 0;
  pass &= run(sim_args + (dir / "r2.csv").string()) == 0;
  const bool sim_same = slurp(dir / "r1.csv") == slurp(dir / "r2.csv");
  detail += std::string("simulate ") + (sim_same ? "identical" : "DIFFERS") + "; ";
  pass &= sim_same;

  const std::string est_args = "estimate --data " + (dir / "panel.csv").string() +
                               " --msm additive --method bao --bootstrap 10 "
                               "--seed 5 --out ";
  pass &= run(est_args + (dir / "e1.json").string()) == 0;
  pass &= run(est_args + (dir / "e2.json").string()) == 0;
  const bool est_same = slurp(dir / "e1.json") == slurp(dir / "e2.json");
  detail += std::string("estimate ") + (est_same ? "identical" : "DIFFERS") + "; ";
  pass &= est_same;

  line("criterion 9 (CLI determinism)", pass, detail + fmt(elapsed(t0)) + " s");
}

}  // namespace

int main() {
  std::cout << "acceptance suite (" << threads() << " threads)\n";
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  criterion9();
  std::cout << (g_failures == 0 ? "all criteria passed"
                                : std::to_string(g_failures) +
                                      " criterion check(s) failed")
            << "\n";
  return g_failures == 0 ? 0 : 1;
}
