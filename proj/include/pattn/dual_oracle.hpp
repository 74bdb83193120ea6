#ifndef PATTN_DUAL_ORACLE_HPP
#define PATTN_DUAL_ORACLE_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "pattn/attention.hpp"
#include "pattn/ksvd_objective.hpp"
#include "pattn/linalg.hpp"

namespace pattn {

/// Left singular vectors H_e, right singular vectors H_r and singular values
/// of an attention kernel; row i of H_e is h_{e_i}.
template <typename Scalar>
struct KsvdSolution {
  MatrixX<Scalar> h_e;
  MatrixX<Scalar> h_r;
  VectorX<Scalar> sigma;
  Index requested = 0;
  /// Set when fewer than `requested` positive singular values exist.
  bool truncated = false;

  Index directions() const { return sigma.size(); }
};

template <typename Scalar>
struct StationaryParams {
  MatrixX<Scalar> w_e_star;
  MatrixX<Scalar> w_r_star;
  VectorX<Scalar> lambda_star;  // Sigma^-1
  Index sample_rows = 0;

  VectorX<Scalar> lambda_raw() const { return lambda_star.array().log().matrix(); }
};

/// Lifted features phi'(x_i) as rows: F_X phi(x_i) in data-dependent mode,
/// phi(x_i) otherwise. A causal data-dependent head lifts through the full X.
template <typename Scalar>
std::pair<MatrixX<Scalar>, MatrixX<Scalar>> lifted_features(const MatrixX<Scalar>& x,
                                                            const HeadParams<Scalar>& params,
                                                            const FeatureMapSpec<Scalar>& fmap) {
  params.validate(fmap.feature_dim());
  const auto proj = project(params.projections, x);
  MatrixX<Scalar> phi_q = apply_feature_map_rows(fmap, proj.q);
  MatrixX<Scalar> phi_k = apply_feature_map_rows(fmap, proj.k);
  if (params.mode == ProjectionMode::DataIndependent) return {std::move(phi_q), std::move(phi_k)};
  const MatrixX<Scalar> fx = params.causal ? x : build_fx(x, params);
  return {phi_q * fx.transpose(), phi_k * fx.transpose()};
}

/// K_ij = <phi'_q(x_i), phi'_k(x_j)>. No softmax-surrogate normalizer is applied.
template <typename Scalar>
MatrixX<Scalar> build_kernel(const MatrixX<Scalar>& x, const HeadParams<Scalar>& params,
                             const FeatureMapSpec<Scalar>& fmap) {
  const auto [lq, lk] = lifted_features(x, params, fmap);
  MatrixX<Scalar> k = lq * lk.transpose();
  require_finite(k, "kernel");
  return k;
}

/// Singular values at or below this fraction of the largest are treated as zero.
inline constexpr double kRankTolerance = 1e-10;

/// Top-s solution of K H_r = H_e Sigma, K^T H_e = H_r Sigma; zero singular
/// values are dropped and flagged.
template <typename Scalar>
KsvdSolution<Scalar> ksvd_solve(const MatrixX<Scalar>& k, Index s) {
  detail::require_shape(k.rows() == k.cols(), "ksvd_solve: kernel must be square");
  detail::require_shape(s >= 1 && s <= k.rows(), "ksvd_solve: s must lie in [1, N]");
  auto f = svd(k, s);
  const Scalar cut = f.sigma.size() ? f.sigma(0) * Scalar(kRankTolerance) : Scalar(0);
  Index keep = 0;
  while (keep < f.sigma.size() && f.sigma(keep) > cut && f.sigma(keep) > Scalar(0)) ++keep;
  KsvdSolution<Scalar> sol;
  sol.requested = s;
  sol.truncated = keep < s;
  sol.h_e = f.u.leftCols(keep);
  sol.h_r = f.v.leftCols(keep);
  sol.sigma = f.sigma.head(keep);
  return sol;
}

/// Stationary primal weights from the dual solution:
/// W_e* = sum_j F_X phi_k(x_j) h_{r_j}^T, W_r* = sum_i F_X phi_q(x_i) h_{e_i}^T,
/// Lambda* = Sigma^-1.
template <typename Scalar>
StationaryParams<Scalar> stationary_params(const KsvdSolution<Scalar>& sol, const MatrixX<Scalar>& x,
                                           const HeadParams<Scalar>& params,
                                           const FeatureMapSpec<Scalar>& fmap) {
  detail::require_shape(sol.directions() >= 1, "stationary_params: empty solution");
  for (Index l = 0; l < sol.sigma.size(); ++l)
    if (sol.sigma(l) < Scalar(1e-12))
      throw IllConditionedError("stationary_params: singular value " + std::to_string(l) + " below 1e-12");
  params.validate(fmap.feature_dim());
  const auto proj = project(params.projections, x);
  const MatrixX<Scalar> phi_q = apply_feature_map_rows(fmap, proj.q);
  const MatrixX<Scalar> phi_k = apply_feature_map_rows(fmap, proj.k);
  detail::require_shape(sol.h_e.rows() == x.rows(), "stationary_params: solution does not match x");

  StationaryParams<Scalar> sp;
  if (params.mode == ProjectionMode::DataIndependent) {
    sp.w_e_star = phi_k.transpose() * sol.h_r;
    sp.w_r_star = phi_q.transpose() * sol.h_e;
  } else {
    const MatrixX<Scalar> fx = params.causal ? x : build_fx(x, params);
    sp.w_e_star = fx * (phi_k.transpose() * sol.h_r);
    sp.w_r_star = fx * (phi_q.transpose() * sol.h_e);
  }
  sp.lambda_star = sol.sigma.cwiseInverse();
  sp.sample_rows = sp.w_e_star.rows();
  return sp;
}

/// Copy of `params` carrying the stationary W_e, W_r and Lambda.
template <typename Scalar>
HeadParams<Scalar> with_stationary(HeadParams<Scalar> params, const StationaryParams<Scalar>& sp) {
  params.w_e = sp.w_e_star;
  params.w_r = sp.w_r_star;
  params.lambda_raw = sp.lambda_raw();
  if (params.mode == ProjectionMode::DataDependent && !params.causal) params.sample_rows = sp.sample_rows;
  return params;
}

/// Dual expansions: e(x_i) = sum_j h_{r_j} K_ij, r(x_j) = sum_i h_{e_i} K_ij,
/// summed term by term.
template <typename Scalar>
std::pair<MatrixX<Scalar>, MatrixX<Scalar>> dual_scores(const MatrixX<Scalar>& k,
                                                        const KsvdSolution<Scalar>& sol) {
  const Index n = k.rows();
  const Index s = sol.directions();
  MatrixX<Scalar> e = MatrixX<Scalar>::Zero(n, s);
  MatrixX<Scalar> r = MatrixX<Scalar>::Zero(n, s);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      e.row(i) += k(i, j) * sol.h_r.row(j);
      r.row(j) += k(i, j) * sol.h_e.row(i);
    }
  return {std::move(e), std::move(r)};
}

struct CheckResult {
  std::string name;
  double residual = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct VerificationReport {
  std::vector<CheckResult> checks;
  Index tokens = 0;
  Index requested_directions = 0;
  Index used_directions = 0;
  bool truncated = false;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
  }
  const CheckResult* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

struct VerifyOptions {
  /// Flips the sign of the first H_e column before checking (fault injection).
  bool corrupt = false;
};

/// Runs every dual-side certificate for one head on one input:
/// shifted eigenproblem, orthonormality, full-rank reconstruction, zero
/// objective at the stationary point, primal/dual score equality and the
/// equal-norm identity. Failures are reported, never thrown, except for
/// malformed shapes.
template <typename Scalar>
VerificationReport verify_suite(const MatrixX<Scalar>& x, const HeadParams<Scalar>& params,
                                const FeatureMapSpec<Scalar>& fmap, Index s, const VerifyOptions& opts = {}) {
  VerificationReport rep;
  rep.tokens = x.rows();
  rep.requested_directions = s;
  const MatrixX<Scalar> k = build_kernel(x, params, fmap);
  const double knorm = static_cast<double>(k.norm());
  auto add = [&](std::string name, double residual, double tol) {
    rep.checks.push_back({std::move(name), residual, tol, std::isfinite(residual) && residual <= tol});
  };

  auto sol = ksvd_solve(k, s);
  auto full = ksvd_solve(k, k.rows());
  if (opts.corrupt) {
    if (sol.directions()) sol.h_e.col(0) *= Scalar(-1);
    if (full.directions()) full.h_e.col(0) *= Scalar(-1);
  }
  rep.used_directions = sol.directions();
  rep.truncated = sol.truncated;
  if (sol.directions() == 0) {
    add("nonzero_kernel", knorm, 0.0);
    return rep;
  }

  const MatrixX<Scalar> sig = sol.sigma.asDiagonal();
  const double res_right = static_cast<double>((k * sol.h_r - sol.h_e * sig).norm());
  const double res_left = static_cast<double>((k.transpose() * sol.h_e - sol.h_r * sig).norm());
  add("shifted_eigenproblem", std::max(res_right, res_left), 1e-8 * knorm);

  const Index used = sol.directions();
  const MatrixX<Scalar> eye = MatrixX<Scalar>::Identity(used, used);
  add("orthonormality",
      static_cast<double>(std::max((sol.h_e.transpose() * sol.h_e - eye).norm(),
                                   (sol.h_r.transpose() * sol.h_r - eye).norm())),
      1e-8);

  add("reconstruction",
      static_cast<double>((k - full.h_e * full.sigma.asDiagonal() * full.h_r.transpose()).norm()),
      1e-8 * knorm);

  double equal_norm = 0.0;
  for (Index l = 0; l < used; ++l)
    equal_norm = std::max(equal_norm, static_cast<double>(std::abs(sol.h_e.col(l).squaredNorm() -
                                                                   sol.h_r.col(l).squaredNorm())));
  add("equal_norm", equal_norm, 1e-9);

  try {
    const auto sp = stationary_params(sol, x, params, fmap);
    const auto stat = with_stationary(params, sp);
    const OutputMap<Scalar> sink{MatrixX<Scalar>::Zero(1, 2 * used)};
    const auto primal = primal_forward(x, stat, fmap, sink, nullptr, false);
    const double j = static_cast<double>(ksvd_objective(primal.e_scores, primal.r_scores, stat.raw_e(x.rows()),
                                                        stat.raw_r(x.rows()), stat.lambda()));
    add("zero_objective", std::abs(j), 1e-8 * (1.0 + knorm));
    const auto [e_dual, r_dual] = dual_scores(k, sol);
    add("primal_dual_e", static_cast<double>((primal.e_scores - e_dual).cwiseAbs().maxCoeff()), 1e-8);
    add("primal_dual_r", static_cast<double>((primal.r_scores - r_dual).cwiseAbs().maxCoeff()), 1e-8);
  } catch (const IllConditionedError&) {
    add("zero_objective", HUGE_VAL, 1e-8 * (1.0 + knorm));
  }
  return rep;
}

}  // namespace pattn

#endif  // PATTN_DUAL_ORACLE_HPP
