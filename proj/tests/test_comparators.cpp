#include <catch2/catch_amalgamated.hpp>

#include "bao/comparators.hpp"
#include "bao/simlab.hpp"

using namespace bao;

TEST_CASE("all-zero response flags separation with a capped intercept") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(50, 1);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(50);
  LogisticFit fit = fit_logistic(X, y);
  REQUIRE(fit.separation);
  REQUIRE(fit.coef(0) == -30.0);
}

TEST_CASE("null slope on an independent regressor") {
  RngStream rng(64);
  const int n = 10000;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.normal();
    y(i) = rng.bernoulli(0.5);
  }
  LogisticFit fit = fit_logistic(X, y);
  REQUIRE(fit.converged);
  REQUIRE(std::abs(fit.coef(1)) < 0.07);
}

TEST_CASE("study-1 first-period model recovers the assignment coefficients") {
  PanelDataset d = gen_study1(10000, RngStream(2718));
  PropensityModel model = fit_propensity(d);
  const Eigen::VectorXd& c = model.denominator[0].coef;
  // Design is (intercept, x1..x4); truth (-0.5, 1, -0.5, 0.25, 0.1).
  REQUIRE(c(0) == Catch::Approx(-0.5).margin(0.15));
  REQUIRE(c(1) == Catch::Approx(1.0).margin(0.15));
  REQUIRE(c(2) == Catch::Approx(-0.5).margin(0.15));
  REQUIRE(c(3) == Catch::Approx(0.25).margin(0.15));
  REQUIRE(c(4) == Catch::Approx(0.1).margin(0.15));
}

TEST_CASE("constant half propensity gives standard weight four at T=2") {
  // Treatments coin-flipped independently of a noise covariate.
  PanelDataset d;
  d.n = 400;
  d.T = 2;
  RngStream rng(12);
  d.covariates = {Eigen::MatrixXd(d.n, 1), Eigen::MatrixXd(d.n, 1)};
  d.treatments.resize(d.n, 2);
  d.outcome.resize(d.n);
  for (int i = 0; i < d.n; ++i) {
    d.ids.push_back(std::to_string(i));
    d.covariates[0](i, 0) = rng.normal();
    d.covariates[1](i, 0) = rng.normal();
    d.treatments(i, 0) = rng.bernoulli(0.5);
    d.treatments(i, 1) = rng.bernoulli(0.5);
    d.outcome(i) = rng.normal();
  }
  PropensityModel model = fit_propensity(d);
  Eigen::VectorXd w = ipw_weights(d, model, IpwMode::Standard);
  // Estimated propensities hover near 1/2, so weights near 4.
  REQUIRE(w.mean() == Catch::Approx(4.0).margin(0.35));

  // Stabilized weights with numerator == denominator structure: when no
  // covariates matter, the ratio nearly cancels to 1.
  Eigen::VectorXd ws = ipw_weights(d, model, IpwMode::Stabilized);
  REQUIRE(ws.mean() == Catch::Approx(1.0).margin(0.1));
}

TEST_CASE("stabilized equals standard times a path-constant factor") {
  PanelDataset d = gen_study1(500, RngStream(77));
  PropensityModel model = fit_propensity(d);
  Eigen::VectorXd std_w = ipw_weights(d, model, IpwMode::Standard);
  Eigen::VectorXd stab_w = ipw_weights(d, model, IpwMode::Stabilized);
  std::map<std::uint32_t, double> factor;
  for (int i = 0; i < d.n; ++i) {
    const double ratio = stab_w(i) / std_w(i);
    auto [it, fresh] = factor.try_emplace(d.path_prefix(i, d.T), ratio);
    if (!fresh) REQUIRE(ratio == Catch::Approx(it->second).epsilon(1e-9));
  }
  REQUIRE(factor.size() == 4);
}

TEST_CASE("truncation caps at the type-7 95th percentile") {
  std::vector<double> w(20, 1.0);
  w[19] = 100.0;
  // h = 19*0.95 = 18.05 -> q = x[18] + 0.05*(x[19]-x[18]) = 1 + 4.95 = 5.95.
  REQUIRE(quantile_type7(w, 0.95) == Catch::Approx(5.95));
}

TEST_CASE("ipw msm with equal weights is plain ols and recovers truth") {
  // Y depends only on the treatment path, linearly.
  PanelDataset d;
  d.n = 200;
  d.T = 2;
  RngStream rng(5);
  d.covariates = {Eigen::MatrixXd(d.n, 1), Eigen::MatrixXd(d.n, 1)};
  d.treatments.resize(d.n, 2);
  d.outcome.resize(d.n);
  for (int i = 0; i < d.n; ++i) {
    d.ids.push_back(std::to_string(i));
    d.covariates[0](i, 0) = rng.normal();
    d.covariates[1](i, 0) = rng.normal();
    const int z1 = rng.bernoulli(0.5), z2 = rng.bernoulli(0.5);
    d.treatments(i, 0) = z1;
    d.treatments(i, 1) = z2;
    d.outcome(i) = 3.0 + 2.0 * z1 - 5.0 * z2;
  }
  Eigen::VectorXd coef =
      ipw_msm(d, Eigen::VectorXd::Ones(d.n), MsmDesign::named("additive", 2));
  REQUIRE(coef(0) == Catch::Approx(3.0).margin(1e-9));
  REQUIRE(coef(1) == Catch::Approx(2.0).margin(1e-9));
  REQUIRE(coef(2) == Catch::Approx(-5.0).margin(1e-9));
}

TEST_CASE("gcomp: constant outcome is recovered exactly for every path") {
  PanelDataset d = gen_study1(150, RngStream(31));
  d.outcome.setConstant(42.0);
  for (std::uint32_t code = 0; code < 4; ++code) {
    REQUIRE(gcomp_ice(d, {2, code}, IceMode::Pooled) ==
            Catch::Approx(42.0).margin(1e-8));
    REQUIRE(gcomp_ice(d, {2, code}, IceMode::Stratified) ==
            Catch::Approx(42.0).margin(1e-8));
  }
}

TEST_CASE("gcomp: exact linear recovery at T=1 on noiseless data") {
  PanelDataset d;
  d.n = 60;
  d.T = 1;
  RngStream rng(71);
  d.covariates = {Eigen::MatrixXd(d.n, 1)};
  d.treatments.resize(d.n, 1);
  d.outcome.resize(d.n);
  const double a = 1.5, b = -2.0, c = 4.0;
  double xsum = 0;
  for (int i = 0; i < d.n; ++i) {
    d.ids.push_back(std::to_string(i));
    const double x = rng.normal();
    const int z = rng.bernoulli(expit(x));
    d.covariates[0](i, 0) = x;
    d.treatments(i, 0) = z;
    d.outcome(i) = a + b * x + c * z;
    xsum += x;
  }
  const double want1 = a + b * xsum / d.n + c;
  const double want0 = a + b * xsum / d.n;
  REQUIRE(gcomp_ice(d, {1, 1}, IceMode::Pooled) ==
          Catch::Approx(want1).margin(1e-8));
  REQUIRE(gcomp_ice(d, {1, 0}, IceMode::Pooled) ==
          Catch::Approx(want0).margin(1e-8));
}

TEST_CASE("unadjusted means are plain path averages") {
  PanelDataset d;
  d.n = 4;
  d.T = 1;
  d.covariates = {Eigen::MatrixXd::Zero(4, 1)};
  d.treatments.resize(4, 1);
  d.outcome.resize(4);
  d.ids = {"1", "2", "3", "4"};
  d.treatments << 0, 0, 1, 1;
  d.outcome << 1, 3, 5, 5;
  auto means = unadjusted_means(d);
  REQUIRE(means.at(0) == Catch::Approx(2.0));
  REQUIRE(means.at(1) == Catch::Approx(5.0));
}

TEST_CASE("irls monotonically decreases the deviance") {
  // Indirect check: convergence flag plus tiny gradient on a hard-ish fit.
  PanelDataset d = gen_study3(2000, RngStream(2));
  PropensityModel model = fit_propensity(d);
  for (const auto& f : model.denominator) {
    REQUIRE((f.converged || f.separation));
    if (f.converged) REQUIRE(f.grad_norm < 1e-8);
  }
}
