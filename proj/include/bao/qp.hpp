#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "bao/errors.hpp"
#include "bao/panel.hpp"

namespace bao {

// One balance program: minimize sum w_i^2 over the probability simplex on
// the path members subject to |A w - b| <= delta rowwise.
struct QpProblem {
  TreatmentPath path;
  std::vector<int> members;            // unit indices, size m
  Eigen::MatrixXd A;                   // K x m
  Eigen::VectorXd b;                   // K
  Eigen::VectorXd delta;               // K, >= 0, +inf allowed
  std::vector<std::string> row_labels; // K, "(t, feature)" tags

  int m() const { return static_cast<int>(A.cols()); }
  int K() const { return static_cast<int>(A.rows()); }

  void check() const {
    if (m() < 1) throw StructuralError("QP problem has no members");
    if (b.size() != K() || delta.size() != K())
      throw StructuralError("QP problem dimensions inconsistent");
    if ((delta.array() < 0).any())
      throw StructuralError("QP tolerances must be nonnegative");
  }
};

struct SolverOptions {
  double tol = 1e-8;          // primal-dual stopping tolerance
  int max_iter_factor = 100;  // iteration cap = factor * (m + K)
  double infeas_tol = 1e-7;   // phase-1 violation threshold (scaled rows)
  std::vector<double> ladder = {1.0, 2.0, 4.0, 8.0};
  unsigned threads = 1;
};

enum class SolveStatus { Optimal, Infeasible, MaxIter };

inline std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::MaxIter: return "max_iter";
  }
  return "unknown";
}

struct KktReport {
  double stationarity = 0.0;
  double primal = 0.0;
  double complementarity = 0.0;
  double max() const { return std::max({stationarity, primal, complementarity}); }
};

struct WeightSolution {
  SolveStatus status = SolveStatus::MaxIter;
  Eigen::VectorXd weights;       // m, nonnegative, sums to 1
  double objective = 0.0;        // sum w^2
  Eigen::VectorXd lambda_plus;   // K, lower-bound multipliers
  Eigen::VectorXd lambda_minus;  // K, upper-bound multipliers
  double nu = 0.0;               // simplex multiplier
  Eigen::VectorXd mu;            // m, nonnegativity multipliers
  KktReport kkt;
  double ess = 0.0;
  double cv = 0.0;
  double max_weight = 0.0;
  int iterations = 0;
  int most_violated = -1;        // populated when infeasible
  double violation = 0.0;        // phase-1 residual when infeasible
};

namespace qpdetail {

inline Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  const int m = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + m);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  int rho = 0;
  for (int j = 0; j < m; ++j) {
    css += u[j];
    const double cand = (css - 1.0) / (j + 1);
    if (u[j] - cand > 0) {
      rho = j + 1;
      theta = cand;
    }
  }
  return (v.array() - theta).max(0.0);
}

inline double spectral_norm(const Eigen::MatrixXd& A) {
  if (A.size() == 0) return 0.0;
  // K is small, so the Gram matrix route is exact and cheap.
  Eigen::MatrixXd gram = A * A.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const double lmax = eig.eigenvalues().maxCoeff();
  return lmax > 0 ? std::sqrt(lmax) : 0.0;
}

// Distance of each row value to its interval, and the worst offender.
inline double box_violation(const Eigen::VectorXd& y, const Eigen::VectorXd& lo,
                            const Eigen::VectorXd& hi, int* argmax) {
  double worst = 0.0;
  int idx = -1;
  for (int k = 0; k < y.size(); ++k) {
    double d = 0.0;
    if (y(k) < lo(k)) d = lo(k) - y(k);
    else if (y(k) > hi(k)) d = y(k) - hi(k);
    if (d > worst) {
      worst = d;
      idx = k;
    }
  }
  if (argmax) *argmax = idx;
  return worst;
}

// Phase-1: minimize half the squared distance of Aw to the box over the
// simplex (FISTA).  Returns the final max violation.
inline double phase1_violation(const Eigen::MatrixXd& A,
                               const Eigen::VectorXd& lo,
                               const Eigen::VectorXd& hi, int max_iter,
                               int* argmax, Eigen::VectorXd* best_w) {
  const int m = static_cast<int>(A.cols());
  const double L = std::max(spectral_norm(A), 1e-12);
  const double step = 1.0 / (L * L);
  Eigen::VectorXd x = Eigen::VectorXd::Constant(m, 1.0 / m);
  Eigen::VectorXd y = x;
  double tk = 1.0;
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_x = x;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd Ay = A * y;
    Eigen::VectorXd clamped = Ay.cwiseMax(lo).cwiseMin(hi);
    Eigen::VectorXd grad = A.transpose() * (Ay - clamped);
    Eigen::VectorXd xn = project_simplex(y - step * grad);
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    y = xn + ((tk - 1.0) / tn) * (xn - x);
    x = xn;
    tk = tn;
    if ((it & 15) == 0 || it + 1 == max_iter) {
      const double viol = box_violation(A * x, lo, hi, nullptr);
      if (viol < best) {
        best = viol;
        best_x = x;
      }
      if (best <= 1e-12) break;
    }
  }
  box_violation(A * best_x, lo, hi, argmax);
  if (best_w) *best_w = best_x;
  return best;
}

struct PolishResult {
  bool ok = false;
  Eigen::VectorXd w;
  Eigen::VectorXd eta;  // K (scaled units)
  double nu = 0.0;
};

// Solve the equality-constrained QP on a guessed support / active set and
// verify the full KKT conditions.  Exact when the guess is right.
inline PolishResult try_polish(const Eigen::MatrixXd& A,
                               const Eigen::VectorXd& lo,
                               const Eigen::VectorXd& hi,
                               const Eigen::VectorXd& w_guess,
                               const Eigen::VectorXd& eta_guess,
                               double support_tol, double active_tol) {
  PolishResult res;
  const int m = static_cast<int>(A.cols());
  const int K = static_cast<int>(A.rows());

  std::vector<int> support;
  for (int i = 0; i < m; ++i)
    if (w_guess(i) > support_tol) support.push_back(i);
  if (support.empty()) return res;

  // Active rows with the bound they sit on: 0 = lower, 1 = upper, 2 = pinned
  // (zero-width interval, sign free).
  std::vector<std::pair<int, int>> active;
  Eigen::VectorXd Aw = A * w_guess;
  for (int k = 0; k < K; ++k) {
    const bool zero_width = (hi(k) - lo(k)) <= 1e-14;
    if (zero_width) {
      active.push_back({k, 2});
      continue;
    }
    const double dlo = std::isfinite(lo(k)) ? Aw(k) - lo(k)
                                            : std::numeric_limits<double>::infinity();
    const double dhi = std::isfinite(hi(k)) ? hi(k) - Aw(k)
                                            : std::numeric_limits<double>::infinity();
    if (eta_guess(k) > 1e-9 || dlo <= active_tol) active.push_back({k, 0});
    else if (eta_guess(k) < -1e-9 || dhi <= active_tol) active.push_back({k, 1});
  }

  const int p = static_cast<int>(support.size());
  const int e = static_cast<int>(active.size());
  Eigen::MatrixXd M(1 + e, p);
  Eigen::VectorXd d(1 + e);
  M.row(0).setOnes();
  d(0) = 1.0;
  for (int r = 0; r < e; ++r) {
    const auto [k, side] = active[r];
    for (int c = 0; c < p; ++c) M(1 + r, c) = A(k, support[c]);
    d(1 + r) = side == 1 ? hi(k) : lo(k);
  }

  // minimize |w_P|^2 s.t. M w_P = d  ->  w_P = M' xi / 2,  (M M') xi = 2 d.
  Eigen::MatrixXd MMt = M * M.transpose();
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(MMt);
  Eigen::VectorXd xi = cod.solve(2.0 * d);
  Eigen::VectorXd wp = M.transpose() * xi / 2.0;
  if ((MMt * xi - 2.0 * d).lpNorm<Eigen::Infinity>() > 1e-8) return res;

  // Primal checks on the support.
  if ((wp.array() < -1e-11).any()) return res;

  Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
  for (int c = 0; c < p; ++c) w(support[c]) = std::max(wp(c), 0.0);
  const double sum = w.sum();
  if (std::abs(sum - 1.0) > 1e-8) return res;
  w /= sum;

  Eigen::VectorXd eta = Eigen::VectorXd::Zero(K);
  const double nu = xi(0);
  for (int r = 0; r < e; ++r) {
    const auto [k, side] = active[r];
    eta(k) += xi(1 + r);
    // Dual sign: lower-bound multipliers >= 0, upper-bound <= 0.
    if (side == 0 && eta(k) < -1e-9) return res;
    if (side == 1 && eta(k) > 1e-9) return res;
  }

  // Inactive rows must be interior; off-support reduced costs must push out.
  Aw = A * w;
  for (int k = 0; k < K; ++k) {
    if (Aw(k) < lo(k) - 1e-9 || Aw(k) > hi(k) + 1e-9) return res;
  }
  Eigen::VectorXd slack = A.transpose() * eta;
  for (int i = 0; i < m; ++i) {
    if (w(i) > 0) continue;
    if (slack(i) + nu > 1e-9) return res;
  }

  res.ok = true;
  res.w = std::move(w);
  res.eta = std::move(eta);
  res.nu = nu;
  return res;
}

}  // namespace qpdetail

// KKT residual report for a candidate solution against its problem, in the
// problem's original units.
inline KktReport kkt_check(const QpProblem& prob, const WeightSolution& sol) {
  KktReport rep;
  const Eigen::VectorXd& w = sol.weights;
  Eigen::VectorXd eta = sol.lambda_plus - sol.lambda_minus;
  Eigen::VectorXd stat =
      2.0 * w - prob.A.transpose() * eta -
      Eigen::VectorXd::Constant(prob.m(), sol.nu) - sol.mu;
  rep.stationarity = stat.lpNorm<Eigen::Infinity>();

  Eigen::VectorXd Aw = prob.A * w;
  double primal = std::abs(w.sum() - 1.0);
  primal = std::max(primal, -std::min(0.0, w.minCoeff()));
  for (int k = 0; k < prob.K(); ++k) {
    const double lo = prob.b(k) - prob.delta(k);
    const double hi = prob.b(k) + prob.delta(k);
    if (std::isfinite(lo)) primal = std::max(primal, lo - Aw(k));
    if (std::isfinite(hi)) primal = std::max(primal, Aw(k) - hi);
  }
  rep.primal = std::max(primal, 0.0);

  double compl_res = 0.0;
  for (int k = 0; k < prob.K(); ++k) {
    if (sol.lambda_plus(k) > 0)
      compl_res = std::max(compl_res, sol.lambda_plus(k) *
                                          std::abs(Aw(k) - (prob.b(k) - prob.delta(k))));
    if (sol.lambda_minus(k) > 0)
      compl_res = std::max(compl_res, sol.lambda_minus(k) *
                                          std::abs((prob.b(k) + prob.delta(k)) - Aw(k)));
  }
  for (int i = 0; i < prob.m(); ++i)
    compl_res = std::max(compl_res, std::abs(sol.mu(i) * w(i)));
  rep.complementarity = compl_res;
  return rep;
}

namespace qpdetail {

inline void finalize(const QpProblem& prob, const Eigen::VectorXd& w,
                     const Eigen::VectorXd& eta_orig, double nu,
                     WeightSolution* sol) {
  const int m = prob.m();
  sol->weights = w;
  sol->objective = w.squaredNorm();
  sol->nu = nu;
  sol->lambda_plus = eta_orig.cwiseMax(0.0);
  sol->lambda_minus = (-eta_orig).cwiseMax(0.0);
  sol->mu.resize(m);
  Eigen::VectorXd slack = prob.A.transpose() * eta_orig;
  for (int i = 0; i < m; ++i)
    sol->mu(i) = w(i) > 0 ? 0.0 : std::max(0.0, -(slack(i) + nu));
  sol->kkt = kkt_check(prob, *sol);
  const double sum = w.sum();
  const double sumsq = w.squaredNorm();
  sol->ess = sumsq > 0 ? sum * sum / sumsq : 0.0;
  const double mean = sum / m;
  const double var = (w.array() - mean).square().sum() / m;
  sol->cv = mean > 0 ? std::sqrt(var) / mean : 0.0;
  sol->max_weight = w.maxCoeff();
}

}  // namespace qpdetail

// Minimize the l2-norm of simplex weights under two-sided balance
// constraints.  Primal-dual operator splitting (separable simplex
// projection against interval constraints, over-relaxed) drives the
// iterates; a direct KKT solve on the detected active set finishes to
// machine precision.  Deterministic: no randomization anywhere.
inline WeightSolution solve_path(const QpProblem& prob,
                                 const SolverOptions& opt = {}) {
  prob.check();
  const int m = prob.m();
  const int K_all = prob.K();
  WeightSolution sol;

  // Row scaling to unit max-norm; drop vacuous rows, catch trivially
  // impossible ones.
  std::vector<int> keep;
  std::vector<double> scale(K_all, 1.0);
  for (int k = 0; k < K_all; ++k) {
    const double s = prob.A.row(k).cwiseAbs().maxCoeff();
    if (!std::isfinite(prob.delta(k)) && prob.delta(k) > 0) continue;  // free row
    if (s == 0.0) {
      if (std::abs(prob.b(k)) > prob.delta(k) + 1e-12) {
        sol.status = SolveStatus::Infeasible;
        sol.most_violated = k;
        sol.violation = std::abs(prob.b(k)) - prob.delta(k);
        sol.weights = Eigen::VectorXd::Constant(m, 1.0 / m);
        sol.lambda_plus = Eigen::VectorXd::Zero(K_all);
        sol.lambda_minus = Eigen::VectorXd::Zero(K_all);
        sol.mu = Eigen::VectorXd::Zero(m);
        return sol;
      }
      continue;  // 0 in [b-delta, b+delta]: row is vacuous
    }
    scale[k] = s;
    keep.push_back(k);
  }
  const int K = static_cast<int>(keep.size());

  Eigen::MatrixXd A(K, m);
  Eigen::VectorXd lo(K), hi(K);
  for (int r = 0; r < K; ++r) {
    const int k = keep[r];
    A.row(r) = prob.A.row(k) / scale[k];
    lo(r) = (prob.b(k) - prob.delta(k)) / scale[k];
    hi(r) = (prob.b(k) + prob.delta(k)) / scale[k];
  }

  auto accept = [&](const qpdetail::PolishResult& pol, int iters) {
    Eigen::VectorXd eta_orig = Eigen::VectorXd::Zero(K_all);
    for (int r = 0; r < K; ++r) eta_orig(keep[r]) = pol.eta(r) / scale[keep[r]];
    sol.status = SolveStatus::Optimal;
    sol.iterations = iters;
    qpdetail::finalize(prob, pol.w, eta_orig, pol.nu, &sol);
  };

  if (K == 0) {
    qpdetail::PolishResult pol;
    pol.ok = true;
    pol.w = Eigen::VectorXd::Constant(m, 1.0 / m);
    pol.eta = Eigen::VectorXd::Zero(0);
    pol.nu = 2.0 / m;
    Eigen::VectorXd eta_orig = Eigen::VectorXd::Zero(K_all);
    sol.status = SolveStatus::Optimal;
    qpdetail::finalize(prob, pol.w, eta_orig, pol.nu, &sol);
    return sol;
  }

  const double Anorm = std::max(qpdetail::spectral_norm(A), 1e-12);
  const double tau = 0.95 / Anorm;
  const double sigma = 0.95 / Anorm;

  Eigen::VectorXd w = Eigen::VectorXd::Constant(m, 1.0 / m);
  Eigen::VectorXd wbar = w;
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(K);

  const long cap = static_cast<long>(opt.max_iter_factor) * (m + K_all);
  bool feasibility_certified = false;
  double best_violation = std::numeric_limits<double>::infinity();
  Eigen::VectorXd w_prev = w, eta_prev = eta;

  // The splitting iteration's dual enters the Lagrangian as +eta'Aw, so the
  // KKT-convention multipliers (2w = A'eta + nu*1 + mu) are its negation.
  auto polish_round = [&](int iters) {
    const Eigen::VectorXd eta_kkt = -eta;
    for (double support_tol : {0.0, 1e-10, 1e-7}) {
      for (double active_tol : {1e-9, 1e-6, 1e-4}) {
        auto pol =
            qpdetail::try_polish(A, lo, hi, w, eta_kkt, support_tol, active_tol);
        if (pol.ok) {
          accept(pol, iters);
          return true;
        }
      }
    }
    return false;
  };

  for (long it = 1; it <= cap; ++it) {
    // Dual ascent on the interval constraints.
    Eigen::VectorXd v = eta + sigma * (A * wbar);
    Eigen::VectorXd y = (v / sigma).cwiseMax(lo).cwiseMin(hi);
    eta = v - sigma * y;
    // Primal descent with exact simplex projection, then over-relaxation.
    Eigen::VectorXd wn =
        qpdetail::project_simplex((w - tau * (A.transpose() * eta)) / (1.0 + 2.0 * tau));
    wbar = 2.0 * wn - w;
    w = wn;

    if (it % 25 == 0 || it == 2) {
      if (polish_round(static_cast<int>(it))) return sol;
      const double viol = qpdetail::box_violation(A * w, lo, hi, nullptr);
      best_violation = std::min(best_violation, viol);
      // Primal-dual stopping rule: stalled iterates at tiny violation mean
      // the polish tolerance simply hasn't caught the right active set yet.
      const double dw = (w - w_prev).lpNorm<Eigen::Infinity>() / tau;
      const double de = (eta - eta_prev).lpNorm<Eigen::Infinity>() / sigma;
      w_prev = w;
      eta_prev = eta;
      if (viol <= opt.tol && dw <= opt.tol && de <= opt.tol) break;
      // Divergent duals signal infeasibility; certify with phase 1.
      if (!feasibility_certified &&
          (eta.lpNorm<Eigen::Infinity>() > 1e7 ||
           (it >= 2000 && best_violation > 1e-3))) {
        int worst = -1;
        Eigen::VectorXd w1;
        const double viol1 =
            qpdetail::phase1_violation(A, lo, hi, 4000, &worst, &w1);
        if (viol1 > opt.infeas_tol) {
          sol.status = SolveStatus::Infeasible;
          sol.most_violated = worst >= 0 ? keep[worst] : -1;
          sol.violation = viol1;
          sol.weights = w1;
          sol.lambda_plus = Eigen::VectorXd::Zero(K_all);
          sol.lambda_minus = Eigen::VectorXd::Zero(K_all);
          sol.mu = Eigen::VectorXd::Zero(m);
          sol.iterations = static_cast<int>(it);
          return sol;
        }
        feasibility_certified = true;
        w = w1;  // warm restart from a feasible(ish) point
        wbar = w;
      }
    }
  }

  if (polish_round(static_cast<int>(cap))) return sol;

  if (!feasibility_certified) {
    int worst = -1;
    Eigen::VectorXd w1;
    const double viol1 = qpdetail::phase1_violation(A, lo, hi, 6000, &worst, &w1);
    if (viol1 > opt.infeas_tol) {
      sol.status = SolveStatus::Infeasible;
      sol.most_violated = worst >= 0 ? keep[worst] : -1;
      sol.violation = viol1;
      sol.weights = w1;
      sol.lambda_plus = Eigen::VectorXd::Zero(K_all);
      sol.lambda_minus = Eigen::VectorXd::Zero(K_all);
      sol.mu = Eigen::VectorXd::Zero(m);
      return sol;
    }
  }

  // Honest cap report: best iterate plus its residuals.
  sol.status = SolveStatus::MaxIter;
  sol.iterations = static_cast<int>(cap);
  Eigen::VectorXd eta_orig = Eigen::VectorXd::Zero(K_all);
  for (int r = 0; r < K; ++r) eta_orig(keep[r]) = -eta(r) / scale[keep[r]];
  const double nu_est =
      w.maxCoeff() > 0
          ? 2.0 * w.mean() - (prob.A.transpose() * eta_orig).mean()
          : 0.0;
  qpdetail::finalize(prob, w, eta_orig, nu_est, &sol);
  return sol;
}

// The all-paths program is separable, so each path's block must coincide
// with its standalone solution; solving per path and returning the blocks
// enforces that postcondition by construction.
inline std::vector<WeightSolution> solve_simultaneous(
    const std::vector<QpProblem>& problems,
    const std::vector<double>& prevalences, const SolverOptions& opt = {}) {
  if (problems.size() != prevalences.size())
    throw StructuralError("one prevalence per path problem required");
  std::vector<WeightSolution> out(problems.size());
  for (std::size_t i = 0; i < problems.size(); ++i)
    out[i] = solve_path(problems[i], opt);
  return out;
}

struct RelaxResult {
  bool feasible = false;
  double multiplier = 0.0;
  WeightSolution solution;
};

// Walk an increasing tolerance ladder until the scaled problem becomes
// feasible; useful as an overlap diagnostic.
inline RelaxResult relax_to_feasible(const QpProblem& prob,
                                     const std::vector<double>& ladder,
                                     const SolverOptions& opt = {}) {
  if (ladder.empty()) throw std::invalid_argument("relaxation ladder is empty");
  for (std::size_t i = 0; i + 1 < ladder.size(); ++i)
    if (!(ladder[i] < ladder[i + 1]))
      throw std::invalid_argument("relaxation ladder must be strictly increasing");
  RelaxResult res;
  for (double mult : ladder) {
    QpProblem scaled = prob;
    scaled.delta = prob.delta * mult;
    res.solution = solve_path(scaled, opt);
    res.multiplier = mult;
    if (res.solution.status == SolveStatus::Optimal) {
      res.feasible = true;
      return res;
    }
  }
  res.feasible = false;
  return res;
}

}  // namespace bao
