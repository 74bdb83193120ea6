#ifndef PATTN_LINALG_HPP
#define PATTN_LINALG_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pattn/errors.hpp"

namespace pattn {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.derived().allFinite();
}

/// Throws NumericError naming `what` if any entry is NaN or infinite.
template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, std::string_view what) {
  if (!m.derived().allFinite()) throw NumericError("non-finite entry in " + std::string(what));
}

template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedB>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  MatrixX<typename DerivedA::Scalar> out = a * b;
  require_finite(out, "matmul result");
  return out;
}

template <typename Derived>
typename Derived::Scalar frobenius_norm(const Eigen::MatrixBase<Derived>& m) {
  return m.norm();
}

/// Thin SVD factors. Columns of `u` and `v` are the left and right singular
/// vectors; they satisfy A v = u sigma and A^T u = v sigma column by column.
template <typename Scalar>
struct SvdResult {
  MatrixX<Scalar> u;
  VectorX<Scalar> sigma;
  MatrixX<Scalar> v;

  Index rank() const { return sigma.size(); }
};

struct SvdOptions {
  /// Pairs with |<a_p, a_q>| <= tolerance * ||a_p|| ||a_q|| count as orthogonal.
  double tolerance = 1e-12;
  /// Sweep cap is sweep_factor * max(rows, cols).
  std::size_t sweep_factor = 10;
};

namespace detail {

// Fills columns of `u` flagged in `missing` with unit vectors orthogonal to
// every other column, drawn from the standard basis in index order.
template <typename Scalar>
void complete_orthonormal(MatrixX<Scalar>& u, const std::vector<bool>& missing) {
  const Index n = u.rows();
  std::vector<bool> done(missing.size());
  for (std::size_t c = 0; c < missing.size(); ++c) done[c] = !missing[c];
  Index basis = 0;
  for (std::size_t c = 0; c < missing.size(); ++c) {
    if (!missing[c]) continue;
    while (basis < n) {
      VectorX<Scalar> cand = VectorX<Scalar>::Unit(n, basis++);
      for (int pass = 0; pass < 2; ++pass)
        for (std::size_t o = 0; o < missing.size(); ++o)
          if (done[o]) cand -= u.col(Index(o)).dot(cand) * u.col(Index(o));
      const Scalar norm = cand.norm();
      if (norm > Scalar(0.5)) {
        u.col(Index(c)) = cand / norm;
        done[c] = true;
        break;
      }
    }
  }
}

// One-sided Jacobi on a tall (rows >= cols) matrix; returns all cols triplets
// in descending order, without the sign convention applied.
template <typename Scalar>
SvdResult<Scalar> jacobi_svd_tall(MatrixX<Scalar> w, const SvdOptions& opts) {
  const Index m = w.rows();
  const Index n = w.cols();
  MatrixX<Scalar> v = MatrixX<Scalar>::Identity(n, n);
  const std::size_t cap = opts.sweep_factor * static_cast<std::size_t>(std::max(m, n));
  const Scalar tol = static_cast<Scalar>(opts.tolerance);

  bool converged = (n < 2);
  std::size_t sweep = 0;
  while (!converged) {
    if (sweep == cap) throw ConvergenceError("svd: one-sided Jacobi did not converge", sweep);
    ++sweep;
    bool rotated = false;
    for (Index p = 0; p + 1 < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const Scalar alpha = w.col(p).squaredNorm();
        const Scalar beta = w.col(q).squaredNorm();
        const Scalar gamma = w.col(p).dot(w.col(q));
        if (gamma == Scalar(0)) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
        rotated = true;
        const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
        const Scalar t = (zeta >= Scalar(0) ? Scalar(1) : Scalar(-1)) /
                         (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
        const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
        const Scalar s = c * t;
        for (Index i = 0; i < m; ++i) {
          const Scalar wp = w(i, p);
          const Scalar wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (Index i = 0; i < n; ++i) {
          const Scalar vp = v(i, p);
          const Scalar vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    converged = !rotated;
  }

  VectorX<Scalar> norms(n);
  for (Index j = 0; j < n; ++j) norms(j) = w.col(j).norm();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return norms(a) > norms(b); });

  SvdResult<Scalar> out;
  out.u.resize(m, n);
  out.v.resize(n, n);
  out.sigma.resize(n);
  const Scalar largest = n > 0 ? norms(order.front()) : Scalar(0);
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  const Scalar floor = std::max(largest, Scalar(1)) * eps * eps;
  std::vector<bool> missing(static_cast<std::size_t>(n), false);
  for (Index k = 0; k < n; ++k) {
    const Index j = order[static_cast<std::size_t>(k)];
    out.v.col(k) = v.col(j);
    if (norms(j) <= floor) {
      out.sigma(k) = Scalar(0);
      out.u.col(k).setZero();
      missing[static_cast<std::size_t>(k)] = true;
    } else {
      out.sigma(k) = norms(j);
      out.u.col(k) = w.col(j) / norms(j);
    }
  }
  complete_orthonormal(out.u, missing);
  return out;
}

}  // namespace detail

/// Makes the largest-magnitude entry of every u column positive (lowest index
/// wins ties) and flips the paired v column with it.
template <typename Scalar>
void apply_sign_convention(SvdResult<Scalar>& r) {
  for (Index c = 0; c < r.u.cols(); ++c) {
    Index best = 0;
    for (Index i = 1; i < r.u.rows(); ++i)
      if (std::abs(r.u(i, c)) > std::abs(r.u(best, c))) best = i;
    if (r.u(best, c) < Scalar(0)) {
      r.u.col(c) *= Scalar(-1);
      r.v.col(c) *= Scalar(-1);
    }
  }
}

/// Top-k singular triplets by one-sided Jacobi.
template <typename Derived>
SvdResult<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& a, Index k,
                                        const SvdOptions& opts = {}) {
  using Scalar = typename Derived::Scalar;
  const Index r = std::min(a.rows(), a.cols());
  if (k < 1 || k > r)
    throw ShapeError("svd: k=" + std::to_string(k) + " outside [1, " + std::to_string(r) + "]");
  require_finite(a, "svd input");

  SvdResult<Scalar> full;
  if (a.rows() >= a.cols()) {
    full = detail::jacobi_svd_tall<Scalar>(MatrixX<Scalar>(a), opts);
  } else {
    auto t = detail::jacobi_svd_tall<Scalar>(MatrixX<Scalar>(a.transpose()), opts);
    full.u = std::move(t.v);
    full.v = std::move(t.u);
    full.sigma = std::move(t.sigma);
  }
  apply_sign_convention(full);

  SvdResult<Scalar> out{full.u.leftCols(k), full.sigma.head(k), full.v.leftCols(k)};
  require_finite(out.u, "svd u");
  require_finite(out.v, "svd v");
  return out;
}

/// Full thin SVD, r = min(rows, cols).
template <typename Derived>
SvdResult<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& a) {
  return svd(a, std::min(a.rows(), a.cols()));
}

}  // namespace pattn

#endif  // PATTN_LINALG_HPP
