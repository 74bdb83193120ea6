#ifndef PATTN_FEATURES_HPP
#define PATTN_FEATURES_HPP

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "pattn/linalg.hpp"
#include "pattn/random.hpp"

namespace pattn {

enum class FeatureKind { Cosine, Identity, RandomExponential };

inline const char* to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::Cosine: return "cosine";
    case FeatureKind::Identity: return "identity";
    case FeatureKind::RandomExponential: return "random_exponential";
  }
  return "?";
}

inline FeatureKind feature_kind_from_string(const std::string& s) {
  if (s == "cosine") return FeatureKind::Cosine;
  if (s == "identity") return FeatureKind::Identity;
  if (s == "random_exponential") return FeatureKind::RandomExponential;
  throw ConfigError("unknown feature map kind '" + s + "'");
}

/// Feature map g applied to a projected query or key. Cosine and Identity map
/// R^d_q to itself; RandomExponential maps to R^p with p directions drawn once
/// from N(0, I) using `seed`.
template <typename Scalar>
class FeatureMapSpec {
 public:
  static FeatureMapSpec cosine(Index input_dim, Scalar epsilon = Scalar(1e-12)) {
    return FeatureMapSpec(FeatureKind::Cosine, input_dim, input_dim, 0, epsilon);
  }
  static FeatureMapSpec identity(Index input_dim) {
    return FeatureMapSpec(FeatureKind::Identity, input_dim, input_dim, 0, Scalar(1e-12));
  }
  /// `feature_dim` defaults to `input_dim` when not given.
  static FeatureMapSpec random_exponential(Index input_dim, std::uint64_t seed,
                                           std::optional<Index> feature_dim = std::nullopt) {
    return FeatureMapSpec(FeatureKind::RandomExponential, input_dim,
                          feature_dim.value_or(input_dim), seed, Scalar(1e-12));
  }
  static FeatureMapSpec make(FeatureKind kind, Index input_dim, Index feature_dim,
                             std::uint64_t seed, Scalar epsilon) {
    if (kind != FeatureKind::RandomExponential && feature_dim != input_dim)
      throw ShapeError(std::string(to_string(kind)) + " feature map requires p == d_q");
    return FeatureMapSpec(kind, input_dim, feature_dim, seed, epsilon);
  }

  FeatureKind kind() const { return kind_; }
  Index input_dim() const { return input_dim_; }
  Index feature_dim() const { return feature_dim_; }
  std::uint64_t seed() const { return seed_; }
  Scalar epsilon() const { return epsilon_; }
  /// p x d_q, row i is w_i. Empty unless RandomExponential.
  const MatrixX<Scalar>& directions() const { return directions_; }

 private:
  FeatureMapSpec(FeatureKind kind, Index input_dim, Index feature_dim, std::uint64_t seed,
                 Scalar epsilon)
      : kind_(kind), input_dim_(input_dim), feature_dim_(feature_dim), seed_(seed), epsilon_(epsilon) {
    if (input_dim < 1 || feature_dim < 1) throw ShapeError("feature map dimensions must be positive");
    if (kind == FeatureKind::RandomExponential) {
      Rng rng(seed);
      directions_ = random_normal<Scalar>(feature_dim, input_dim, rng);
    }
  }

  FeatureKind kind_;
  Index input_dim_;
  Index feature_dim_;
  std::uint64_t seed_;
  Scalar epsilon_;
  MatrixX<Scalar> directions_;
};

/// W_q, W_k (d_q x d) and the canonical-only W_v (d_v x d, may be empty).
template <typename Scalar>
struct ProjectionSet {
  MatrixX<Scalar> w_q;
  MatrixX<Scalar> w_k;
  MatrixX<Scalar> w_v;

  Index input_dim() const { return w_q.cols(); }
  Index qk_dim() const { return w_q.rows(); }

  void validate() const {
    detail::require_shape(w_q.rows() == w_k.rows(), "projection set: d_q != d_k");
    detail::require_shape(w_q.cols() == w_k.cols(), "projection set: W_q and W_k input dims differ");
    detail::require_shape(w_v.size() == 0 || w_v.cols() == w_q.cols(),
                          "projection set: W_v input dim differs");
  }
};

template <typename Scalar>
struct Projected {
  MatrixX<Scalar> q;
  MatrixX<Scalar> k;
  MatrixX<Scalar> v;  // empty when the set has no W_v
};

/// Q = X W_q^T, K = X W_k^T, V = X W_v^T; row i belongs to token i.
template <typename Scalar>
Projected<Scalar> project(const ProjectionSet<Scalar>& ps, const MatrixX<Scalar>& x) {
  ps.validate();
  if (x.cols() != ps.input_dim())
    throw ShapeError("project: input has " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(ps.input_dim()));
  Projected<Scalar> out;
  out.q = x * ps.w_q.transpose();
  out.k = x * ps.w_k.transpose();
  if (ps.w_v.size() != 0) out.v = x * ps.w_v.transpose();
  return out;
}

template <typename Scalar>
VectorX<Scalar> apply_feature_map(const FeatureMapSpec<Scalar>& spec, const VectorX<Scalar>& z) {
  if (z.size() != spec.input_dim())
    throw ShapeError("feature map: input length " + std::to_string(z.size()) + ", expected " +
                     std::to_string(spec.input_dim()));
  switch (spec.kind()) {
    case FeatureKind::Cosine:
      return z / std::max(z.norm(), spec.epsilon());
    case FeatureKind::Identity:
      return z;
    case FeatureKind::RandomExponential: {
      const Scalar damp = -z.squaredNorm() / Scalar(2);
      return ((spec.directions() * z).array() + damp).exp().matrix();
    }
  }
  return z;
}

/// Applies the feature map to every row of z (N x d_q), giving N x p.
template <typename Scalar>
MatrixX<Scalar> apply_feature_map_rows(const FeatureMapSpec<Scalar>& spec, const MatrixX<Scalar>& z) {
  if (z.cols() != spec.input_dim())
    throw ShapeError("feature map: input width " + std::to_string(z.cols()) + ", expected " +
                     std::to_string(spec.input_dim()));
  switch (spec.kind()) {
    case FeatureKind::Cosine: {
      MatrixX<Scalar> out(z.rows(), z.cols());
      for (Index i = 0; i < z.rows(); ++i) out.row(i) = z.row(i) / std::max(z.row(i).norm(), spec.epsilon());
      return out;
    }
    case FeatureKind::Identity:
      return z;
    case FeatureKind::RandomExponential: {
      MatrixX<Scalar> logits = z * spec.directions().transpose();
      for (Index i = 0; i < z.rows(); ++i) logits.row(i).array() -= z.row(i).squaredNorm() / Scalar(2);
      return logits.array().exp().matrix();
    }
  }
  return z;
}

/// Softmax-surrogate normalizer: component i is phi_q(x_i)^T sum_j phi_k(x_j).
/// With `causal` the sum runs over j <= i only.
template <typename Scalar>
VectorX<Scalar> dhat_normalizer(const MatrixX<Scalar>& phi_q, const MatrixX<Scalar>& phi_k,
                                bool causal = false) {
  detail::require_shape(phi_q.rows() == phi_k.rows() && phi_q.cols() == phi_k.cols(),
                        "dhat_normalizer: feature matrices differ in shape");
  const Index n = phi_q.rows();
  VectorX<Scalar> d(n);
  if (causal) {
    RowVectorX<Scalar> prefix = RowVectorX<Scalar>::Zero(phi_k.cols());
    for (Index i = 0; i < n; ++i) {
      prefix += phi_k.row(i);
      d(i) = phi_q.row(i).dot(prefix);
    }
  } else {
    const VectorX<Scalar> key_sum = phi_k.colwise().sum().transpose();
    d = phi_q * key_sum;
  }
  for (Index i = 0; i < n; ++i)
    if (!(d(i) > Scalar(0)))
      throw DegenerateNormalizerError("dhat_normalizer: component " + std::to_string(i) +
                                      " is not positive");
  return d;
}

}  // namespace pattn

#endif  // PATTN_FEATURES_HPP
