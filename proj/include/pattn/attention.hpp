#ifndef PATTN_ATTENTION_HPP
#define PATTN_ATTENTION_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pattn/features.hpp"
#include "pattn/flops.hpp"
#include "pattn/linalg.hpp"
#include "pattn/random.hpp"

namespace pattn {

enum class ProjectionMode { DataIndependent, DataDependent };

inline const char* to_string(ProjectionMode m) {
  return m == ProjectionMode::DataIndependent ? "data_independent" : "data_dependent";
}

inline ProjectionMode projection_mode_from_string(const std::string& s) {
  if (s == "data_independent") return ProjectionMode::DataIndependent;
  if (s == "data_dependent") return ProjectionMode::DataDependent;
  throw ConfigError("unknown projection mode '" + s + "'");
}

/// Learnable state of one Primal-Attention head.
///
/// Data-independent mode: w_e, w_r are p x s and act on the features directly.
/// Data-dependent mode: w_e, w_r hold `capacity` x s rows; a call on N tokens
/// uses the first n = min(s * rank_multi, N) rows against the subsampled input
/// rows F_X (or the first N rows against the full X when causal).
template <typename Scalar>
struct HeadParams {
  ProjectionSet<Scalar> projections;
  MatrixX<Scalar> w_e;
  MatrixX<Scalar> w_r;
  VectorX<Scalar> lambda_raw;
  ProjectionMode mode = ProjectionMode::DataIndependent;
  Index rank_multi = 10;
  std::uint64_t subsample_seed = 0;
  bool causal = false;
  /// Rows of F_X before clipping to the sequence length; 0 means s * rank_multi.
  Index sample_rows = 0;

  Index directions() const { return w_e.cols(); }

  /// n = min(s * rank_multi, N), or min(sample_rows, N) when set.
  Index subsample_size(Index tokens) const {
    return std::min(sample_rows > 0 ? sample_rows : directions() * rank_multi, tokens);
  }

  /// Lambda = exp(lambda_raw), strictly positive.
  VectorX<Scalar> lambda() const { return lambda_raw.array().exp().matrix(); }

  /// Rows of w_e / w_r used for a sequence of `tokens` positions.
  Index weight_rows(Index tokens) const {
    if (mode == ProjectionMode::DataIndependent) return w_e.rows();
    if (causal) return tokens;
    return subsample_size(tokens);
  }

  MatrixX<Scalar> raw_e(Index tokens) const { return w_e.topRows(weight_rows(tokens)); }
  MatrixX<Scalar> raw_r(Index tokens) const { return w_r.topRows(weight_rows(tokens)); }

  void validate(Index feature_dim) const {
    projections.validate();
    detail::require_shape(directions() >= 1, "head: s must be at least 1");
    detail::require_shape(w_r.rows() == w_e.rows() && w_r.cols() == w_e.cols(),
                          "head: W_e and W_r differ in shape");
    detail::require_shape(lambda_raw.size() == directions(), "head: lambda has wrong length");
    if (mode == ProjectionMode::DataIndependent) {
      detail::require_shape(w_e.rows() == feature_dim, "head: W_e must be p x s in data-independent mode");
    } else {
      detail::require_shape(rank_multi >= 1, "head: rank_multi must be positive");
      detail::require_shape(feature_dim == projections.input_dim(),
                            "head: data-dependent mode requires p == d");
    }
  }
};

/// W_o, d_v x 2s.
template <typename Scalar>
struct OutputMap {
  MatrixX<Scalar> w_o;
};

template <typename Scalar>
struct AttentionOutput {
  MatrixX<Scalar> e_scores;      // N x s
  MatrixX<Scalar> r_scores;      // N x s
  MatrixX<Scalar> concatenated;  // N x 2s, row i = [e_i; r_i]
  MatrixX<Scalar> projected;     // N x d_v
};

/// Row indices of X forming F_X: n = min(s * rank_multi, N) distinct rows drawn
/// uniformly from `subsample_seed`, ascending. All rows when n == N.
template <typename Scalar>
std::vector<Index> subsample_indices(Index tokens, const HeadParams<Scalar>& params) {
  const Index n = params.subsample_size(tokens);
  if (n == tokens) {
    std::vector<Index> all(static_cast<std::size_t>(tokens));
    for (Index i = 0; i < tokens; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  Rng rng(params.subsample_seed);
  return sample_without_replacement(tokens, n, rng);
}

/// F_X = X' for the data-dependent projection weights (n x d).
template <typename Scalar>
MatrixX<Scalar> build_fx(const MatrixX<Scalar>& x, const HeadParams<Scalar>& params) {
  if (params.mode != ProjectionMode::DataDependent)
    throw ShapeError("build_fx: head is not in data-dependent mode");
  const auto idx = subsample_indices(x.rows(), params);
  MatrixX<Scalar> fx(Index(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) fx.row(Index(r)) = x.row(idx[r]);
  return fx;
}

namespace detail {

template <typename Scalar>
void count_feature_map(const FeatureMapSpec<Scalar>& fmap, Index tokens, FlopCounter* c) {
  const auto n = static_cast<std::uint64_t>(tokens);
  const auto p = static_cast<std::uint64_t>(fmap.feature_dim());
  const auto dq = static_cast<std::uint64_t>(fmap.input_dim());
  switch (fmap.kind()) {
    case FeatureKind::Cosine: count(c, &FlopCounter::attention, 2 * n * p); break;
    case FeatureKind::Identity: break;
    case FeatureKind::RandomExponential: count(c, &FlopCounter::attention, n * (p * dq + dq + p)); break;
  }
}

// e_i = sum_{j <= i} w[j, :] <x_j, phi_i>, accumulated in index order so each
// row depends on the prefix only.
template <typename Scalar>
MatrixX<Scalar> causal_prefix_mix(const MatrixX<Scalar>& x, const MatrixX<Scalar>& phi,
                                  const MatrixX<Scalar>& w, FlopCounter* c) {
  const Index n = x.rows();
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(n, w.cols());
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j <= i; ++j) {
      Scalar dot = 0;
      for (Index a = 0; a < x.cols(); ++a) dot += x(j, a) * phi(i, a);
      for (Index l = 0; l < w.cols(); ++l) out(i, l) += dot * w(j, l);
    }
  }
  count(c, &FlopCounter::attention,
        static_cast<std::uint64_t>(n * (n + 1) / 2) * static_cast<std::uint64_t>(x.cols() + w.cols()));
  return out;
}

}  // namespace detail

/// Primal-Attention scores from already-projected queries and keys (N x d_q).
/// `x` is only read in data-dependent mode. RandomExponential scores are scaled
/// by D^-1/2 of their own position unless `normalize` is false.
template <typename Scalar>
AttentionOutput<Scalar> primal_scores(const MatrixX<Scalar>& x, const MatrixX<Scalar>& q,
                                      const MatrixX<Scalar>& k, const HeadParams<Scalar>& params,
                                      const FeatureMapSpec<Scalar>& fmap,
                                      const OutputMap<Scalar>& out_map, FlopCounter* counter = nullptr,
                                      bool normalize = true) {
  const Index tokens = q.rows();
  const Index p = fmap.feature_dim();
  const Index s = params.directions();
  params.validate(p);
  detail::require_shape(k.rows() == tokens && q.cols() == fmap.input_dim() && k.cols() == fmap.input_dim(),
                        "primal_forward: projections do not match the feature map");
  detail::require_shape(out_map.w_o.cols() == 2 * s, "primal_forward: W_o must have 2s columns");

  const MatrixX<Scalar> phi_q = apply_feature_map_rows(fmap, q);
  require_finite(phi_q, "phi_q");
  const MatrixX<Scalar> phi_k = apply_feature_map_rows(fmap, k);
  require_finite(phi_k, "phi_k");
  detail::count_feature_map(fmap, tokens, counter);
  detail::count_feature_map(fmap, tokens, counter);
  detail::count_buffer<Scalar>(counter, static_cast<std::uint64_t>(2 * tokens * p));

  AttentionOutput<Scalar> out;
  const auto un = static_cast<std::uint64_t>(tokens);
  const auto up = static_cast<std::uint64_t>(p);
  const auto us = static_cast<std::uint64_t>(s);
  if (params.mode == ProjectionMode::DataIndependent) {
    out.e_scores = phi_q * params.w_e;
    out.r_scores = phi_k * params.w_r;
    detail::count(counter, &FlopCounter::attention, 2 * un * up * us);
  } else if (params.causal) {
    detail::require_shape(x.rows() == tokens && x.cols() == p, "primal_forward: X must be N x p");
    detail::require_shape(params.w_e.rows() >= tokens,
                          "primal_forward: causal data-dependent head needs W_e rows >= N");
    const MatrixX<Scalar> w_e = params.raw_e(tokens);
    const MatrixX<Scalar> w_r = params.raw_r(tokens);
    out.e_scores = detail::causal_prefix_mix(x, phi_q, w_e, counter);
    out.r_scores = detail::causal_prefix_mix(x, phi_k, w_r, counter);
  } else {
    detail::require_shape(x.rows() == tokens && x.cols() == p, "primal_forward: X must be N x p");
    const MatrixX<Scalar> fx = build_fx(x, params);
    const Index n = fx.rows();
    detail::require_shape(params.w_e.rows() >= n, "primal_forward: W_e has fewer rows than F_X");
    const MatrixX<Scalar> w_e_x = fx.transpose() * params.w_e.topRows(n);
    const MatrixX<Scalar> w_r_x = fx.transpose() * params.w_r.topRows(n);
    require_finite(w_e_x, "W_e|X");
    require_finite(w_r_x, "W_r|X");
    detail::count(counter, &FlopCounter::fold, 2 * static_cast<std::uint64_t>(n) * up * us);
    detail::count_buffer<Scalar>(counter, 2 * up * us);
    out.e_scores = phi_q * w_e_x;
    out.r_scores = phi_k * w_r_x;
    detail::count(counter, &FlopCounter::attention, 2 * un * up * us);
  }

  if (normalize && fmap.kind() == FeatureKind::RandomExponential) {
    const VectorX<Scalar> dhat = dhat_normalizer(phi_q, phi_k, params.causal);
    detail::count(counter, &FlopCounter::attention, 2 * un * up);
    const VectorX<Scalar> scale = dhat.array().rsqrt().matrix();
    out.e_scores = scale.asDiagonal() * out.e_scores;
    out.r_scores = scale.asDiagonal() * out.r_scores;
    detail::count(counter, &FlopCounter::attention, 2 * un * us);
  }
  require_finite(out.e_scores, "e_scores");
  require_finite(out.r_scores, "r_scores");

  out.concatenated.resize(tokens, 2 * s);
  out.concatenated << out.e_scores, out.r_scores;
  out.projected = out.concatenated * out_map.w_o.transpose();
  require_finite(out.projected, "attention output");
  detail::count(counter, &FlopCounter::attention, 2 * un * us * static_cast<std::uint64_t>(out_map.w_o.rows()));
  detail::count_buffer<Scalar>(counter, 2 * un * us + un * static_cast<std::uint64_t>(out_map.w_o.rows()));
  return out;
}

/// Primal-Attention forward for one head: o_i = W_o [e_i; r_i].
template <typename Scalar>
AttentionOutput<Scalar> primal_forward(const MatrixX<Scalar>& x, const HeadParams<Scalar>& params,
                                       const FeatureMapSpec<Scalar>& fmap,
                                       const OutputMap<Scalar>& out_map, FlopCounter* counter = nullptr,
                                       bool normalize = true) {
  require_finite(x, "attention input");
  const auto proj = project(params.projections, x);
  require_finite(proj.q, "q projection");
  require_finite(proj.k, "k projection");
  detail::count(counter, &FlopCounter::projection,
                2 * static_cast<std::uint64_t>(x.rows() * x.cols() * proj.q.cols()));
  return primal_scores(x, proj.q, proj.k, params, fmap, out_map, counter, normalize);
}

/// Row-stochastic softmax(Q K^T / sqrt(d_k)); entries above the diagonal are
/// exactly zero when `causal`.
template <typename Scalar>
MatrixX<Scalar> softmax_attention_matrix(const MatrixX<Scalar>& q, const MatrixX<Scalar>& k,
                                         bool causal = false, FlopCounter* counter = nullptr) {
  detail::require_shape(q.cols() == k.cols() && q.rows() == k.rows(), "softmax attention: Q and K differ");
  const Index n = q.rows();
  const Scalar inv_temp = Scalar(1) / std::sqrt(static_cast<Scalar>(k.cols()));
  MatrixX<Scalar> a = (q * k.transpose()) * inv_temp;
  for (Index i = 0; i < n; ++i) {
    const Index last = causal ? i + 1 : n;
    const Scalar peak = a.row(i).head(last).maxCoeff();
    Scalar total = 0;
    for (Index j = 0; j < last; ++j) {
      a(i, j) = std::exp(a(i, j) - peak);
      total += a(i, j);
    }
    for (Index j = 0; j < last; ++j) a(i, j) /= total;
    for (Index j = last; j < n; ++j) a(i, j) = Scalar(0);
  }
  const auto un = static_cast<std::uint64_t>(n);
  detail::count(counter, &FlopCounter::attention, un * un * static_cast<std::uint64_t>(k.cols()) + un * un);
  detail::count_buffer<Scalar>(counter, un * un);
  return a;
}

/// Softmax attention from projected Q, K, V.
template <typename Scalar>
MatrixX<Scalar> canonical_core(const MatrixX<Scalar>& q, const MatrixX<Scalar>& k, const MatrixX<Scalar>& v,
                               bool causal = false, FlopCounter* counter = nullptr) {
  detail::require_shape(v.rows() == k.rows(), "canonical attention: V rows differ from K rows");
  const MatrixX<Scalar> a = softmax_attention_matrix(q, k, causal, counter);
  MatrixX<Scalar> out = a * v;
  const auto un = static_cast<std::uint64_t>(q.rows());
  detail::count(counter, &FlopCounter::attention, un * un * static_cast<std::uint64_t>(v.cols()));
  detail::count_buffer<Scalar>(counter, un * static_cast<std::uint64_t>(v.cols()));
  require_finite(out, "canonical attention output");
  return out;
}

/// Canonical softmax self-attention: o_i = sum_j v(x_j) softmax_j(<q_i, k_j> / sqrt(d_k)).
template <typename Scalar>
MatrixX<Scalar> canonical_forward(const MatrixX<Scalar>& x, const ProjectionSet<Scalar>& ps,
                                  bool causal = false, FlopCounter* counter = nullptr) {
  detail::require_shape(ps.w_v.size() != 0, "canonical_forward: projection set has no W_v");
  require_finite(x, "attention input");
  const auto proj = project(ps, x);
  detail::count(counter, &FlopCounter::projection,
                2 * static_cast<std::uint64_t>(x.rows() * x.cols()) *
                    static_cast<std::uint64_t>(proj.q.cols() + proj.k.cols() + proj.v.cols()));
  return canonical_core(proj.q, proj.k, proj.v, causal, counter);
}

/// Concatenates every head's projected output along features, then maps
/// through `mixer` (d_model x h*d_v).
template <typename Scalar>
MatrixX<Scalar> multi_head_forward(const MatrixX<Scalar>& x, const std::vector<HeadParams<Scalar>>& heads,
                                   const FeatureMapSpec<Scalar>& fmap,
                                   const std::vector<OutputMap<Scalar>>& out_maps,
                                   const MatrixX<Scalar>& mixer, FlopCounter* counter = nullptr) {
  detail::require_shape(!heads.empty(), "multi_head_forward: need at least one head");
  detail::require_shape(heads.size() == out_maps.size(), "multi_head_forward: one output map per head");
  std::vector<MatrixX<Scalar>> blocks;
  Index width = 0;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    blocks.push_back(primal_forward(x, heads[h], fmap, out_maps[h], counter).projected);
    width += blocks.back().cols();
  }
  detail::require_shape(mixer.cols() == width, "multi_head_forward: mixer width != h * d_v");
  MatrixX<Scalar> concat(x.rows(), width);
  Index col = 0;
  for (const auto& b : blocks) {
    concat.middleCols(col, b.cols()) = b;
    col += b.cols();
  }
  MatrixX<Scalar> out = concat * mixer.transpose();
  require_finite(out, "multi-head output");
  return out;
}

}  // namespace pattn

#endif  // PATTN_ATTENTION_HPP
