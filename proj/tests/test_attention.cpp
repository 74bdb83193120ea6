#include <set>

#include "doctest.h"
#include "pattn/attention.hpp"
#include "pattn/dual_oracle.hpp"
#include "test_util.hpp"

using namespace pattn;
using namespace pattn::testing;

namespace {

HeadParams<double> dd_head(Index s, Index rank_multi, std::uint64_t seed) {
  HeadParams<double> h;
  h.projections.w_q = Mat::Identity(4, 4);
  h.projections.w_k = Mat::Identity(4, 4);
  h.mode = ProjectionMode::DataDependent;
  h.rank_multi = rank_multi;
  h.subsample_seed = seed;
  h.w_e = Mat::Zero(s * rank_multi, s);
  h.w_r = Mat::Zero(s * rank_multi, s);
  h.lambda_raw = Vec::Zero(s);
  return h;
}

}  // namespace

TEST_CASE("build_fx subsample size and determinism") {
  Rng rng(20);
  const auto h = dd_head(20, 10, 99);
  const Mat x150 = randn(150, 4, rng);
  CHECK(build_fx(x150, h) == x150);

  const Mat x1000 = randn(1000, 4, rng);
  const auto idx = subsample_indices(1000, h);
  CHECK(idx.size() == 200);
  CHECK(std::set<Index>(idx.begin(), idx.end()).size() == 200);
  CHECK(std::is_sorted(idx.begin(), idx.end()));
  const Mat fx = build_fx(x1000, h);
  CHECK(fx.rows() == 200);
  for (std::size_t r = 0; r < idx.size(); ++r) CHECK(fx.row(Index(r)) == x1000.row(idx[r]));
  CHECK(subsample_indices(1000, h) == idx);
  CHECK(subsample_indices(1000, dd_head(20, 10, 100)) != idx);

  HeadParams<double> di = h;
  di.mode = ProjectionMode::DataIndependent;
  CHECK_THROWS_AS(build_fx(x150, di), ShapeError);
}

TEST_CASE("primal forward hand example") {
  HeadParams<double> h;
  h.projections.w_q = Mat::Constant(1, 1, 1.0);
  h.projections.w_k = Mat::Constant(1, 1, 1.0);
  h.w_e = Mat::Constant(1, 1, 2.0);
  h.w_r = Mat::Constant(1, 1, 3.0);
  h.lambda_raw = Vec::Zero(1);
  const auto out = primal_forward(Mat(Mat::Constant(1, 1, 5.0)), h, FeatureMapSpec<double>::identity(1),
                                  OutputMap<double>{from_rows({{1, 1}})});
  CHECK(out.e_scores(0, 0) == 10.0);
  CHECK(out.r_scores(0, 0) == 15.0);
  CHECK(out.projected(0, 0) == 25.0);
  CHECK(out.concatenated == from_rows({{10, 15}}));
}

TEST_CASE("primal forward concatenation layout and both modes") {
  Rng rng(21);
  const Index d = 5, s = 3, n = 9;
  const auto fmap = FeatureMapSpec<double>::cosine(d);
  const OutputMap<double> wo{randn(4, 2 * s, rng)};
  for (auto mode : {ProjectionMode::DataIndependent, ProjectionMode::DataDependent}) {
    const auto h = random_head(rng, d, d, d, s, mode, 2, false, 12);
    const Mat x = randn(n, d, rng);
    const auto out = primal_forward(x, h, fmap, wo);
    for (Index i = 0; i < n; ++i) {
      CHECK(out.concatenated.row(i).head(s) == out.e_scores.row(i));
      CHECK(out.concatenated.row(i).tail(s) == out.r_scores.row(i));
    }
    CHECK((out.projected - out.concatenated * wo.w_o.transpose()).norm() <= 1e-14);

    // per-token oracle: e_i = W_{e|X}^T phi_q(q(x_i))
    Mat we = h.w_e, wr = h.w_r;
    if (mode == ProjectionMode::DataDependent) {
      const Mat fx = build_fx(x, h);
      we = fx.transpose() * h.w_e.topRows(fx.rows());
      wr = fx.transpose() * h.w_r.topRows(fx.rows());
    }
    for (Index i = 0; i < n; ++i) {
      const Vec pq = apply_feature_map(fmap, Vec(h.projections.w_q * x.row(i).transpose()));
      const Vec pk = apply_feature_map(fmap, Vec(h.projections.w_k * x.row(i).transpose()));
      CHECK((out.e_scores.row(i).transpose() - we.transpose() * pq).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK((out.r_scores.row(i).transpose() - wr.transpose() * pk).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("primal forward errors") {
  Rng rng(22);
  const auto fmap = FeatureMapSpec<double>::cosine(4);
  auto h = random_head(rng, 4, 4, 4, 2, ProjectionMode::DataIndependent);
  const OutputMap<double> wo{randn(3, 4, rng)};
  CHECK_THROWS_AS(primal_forward(randn(5, 3, rng), h, fmap, wo), ShapeError);
  CHECK_THROWS_AS(primal_forward(randn(5, 4, rng), h, fmap, OutputMap<double>{randn(3, 3, rng)}), ShapeError);
  Mat x = randn(5, 4, rng);
  x(2, 1) = std::nan("");
  CHECK_THROWS_AS(primal_forward(x, h, fmap, wo), NumericError);
  auto bad = h;
  bad.w_e(0, 0) = std::numeric_limits<double>::infinity();
  try {
    primal_forward(randn(5, 4, rng), bad, fmap, wo);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("e_scores") != std::string::npos);
  }
  // data-dependent needs p == d
  auto dd = random_head(rng, 4, 3, 3, 2, ProjectionMode::DataDependent, 2, false, 8);
  CHECK_THROWS_AS(primal_forward(randn(5, 4, rng), dd, FeatureMapSpec<double>::cosine(3), wo), ShapeError);
}

TEST_CASE("causal heads never read future tokens") {
  Rng rng(23);
  const Index d = 4, s = 2, n = 8;
  const OutputMap<double> wo{randn(3, 2 * s, rng)};
  for (auto kind : {FeatureKind::Cosine, FeatureKind::RandomExponential}) {
    const auto fmap = kind == FeatureKind::Cosine ? FeatureMapSpec<double>::cosine(d)
                                                  : FeatureMapSpec<double>::random_exponential(d, 5);
    for (auto mode : {ProjectionMode::DataIndependent, ProjectionMode::DataDependent}) {
      const auto h = random_head(rng, d, d, d, s, mode, 1, true, n);
      const Mat x = randn(n, d, rng, 0.5);
      const auto base = primal_forward(x, h, fmap, wo);
      for (Index i = 0; i + 1 < n; ++i) {
        Mat perturbed = x;
        perturbed.bottomRows(n - i - 1) = randn(n - i - 1, d, rng, 0.5);
        const auto out = primal_forward(perturbed, h, fmap, wo);
        CHECK(out.e_scores.topRows(i + 1) == base.e_scores.topRows(i + 1));
        CHECK(out.r_scores.topRows(i + 1) == base.r_scores.topRows(i + 1));
        CHECK(out.projected.topRows(i + 1) == base.projected.topRows(i + 1));
      }
    }
  }
}

TEST_CASE("causal data-dependent head equals the prefix-kernel dual expansion") {
  Rng rng(24);
  const Index d = 3, s = 2, n = 6;
  const auto fmap = FeatureMapSpec<double>::cosine(d);
  const auto h = random_head(rng, d, d, d, s, ProjectionMode::DataDependent, 1, true, n);
  const Mat x = randn(n, d, rng);
  const auto out = primal_forward(x, h, fmap, OutputMap<double>{Mat::Zero(1, 2 * s)});
  const Mat pq = apply_feature_map_rows(fmap, Mat(x * h.projections.w_q.transpose()));
  for (Index i = 0; i < n; ++i) {
    Vec expected = Vec::Zero(s);
    for (Index j = 0; j <= i; ++j) expected += h.w_e.row(j).transpose() * x.row(j).dot(pq.row(i));
    CHECK((out.e_scores.row(i).transpose() - expected).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("cosine primal scores ignore positive rescaling of a query") {
  Rng rng(25);
  const Index d = 4, s = 3;
  const auto fmap = FeatureMapSpec<double>::cosine(d);
  const auto h = random_head(rng, d, d, d, s, ProjectionMode::DataIndependent);
  const Mat x = randn(6, d, rng);
  const Mat q = x * h.projections.w_q.transpose();
  const Mat k = x * h.projections.w_k.transpose();
  const OutputMap<double> wo{Mat::Zero(1, 2 * s)};
  const auto base = primal_scores(x, q, k, h, fmap, wo);
  for (double c : {0.25, 2.0, 1024.0}) {
    Mat qs = q;
    qs.row(3) *= c;
    CHECK(primal_scores(x, qs, k, h, fmap, wo).e_scores == base.e_scores);
  }
  Mat qs = q;
  qs.row(3) *= 3.7;
  CHECK((primal_scores(x, qs, k, h, fmap, wo).e_scores - base.e_scores).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("canonical forward") {
  Rng rng(26);
  ProjectionSet<double> ps{randn(3, 4, rng), randn(3, 4, rng), randn(2, 4, rng)};
  const Mat x1 = randn(1, 4, rng);
  CHECK((canonical_forward(x1, ps) - x1 * ps.w_v.transpose()).norm() <= 1e-15);

  const Mat same = randn(1, 4, rng).replicate(5, 1);
  const Mat out = canonical_forward(same, ps);
  for (Index i = 0; i < 5; ++i) CHECK((out.row(i) - same.row(0) * ps.w_v.transpose()).norm() <= 1e-14);

  const Mat x = randn(4, 4, rng);
  const Mat fast = canonical_forward(x, ps);
  for (Index i = 0; i < 4; ++i) {
    std::vector<double> w(4);
    double total = 0.0;
    for (Index j = 0; j < 4; ++j) {
      double dot = 0.0;
      for (Index a = 0; a < 3; ++a) {
        double qa = 0.0, ka = 0.0;
        for (Index b = 0; b < 4; ++b) {
          qa += ps.w_q(a, b) * x(i, b);
          ka += ps.w_k(a, b) * x(j, b);
        }
        dot += qa * ka;
      }
      w[std::size_t(j)] = std::exp(dot / std::sqrt(3.0));
      total += w[std::size_t(j)];
    }
    for (Index c = 0; c < 2; ++c) {
      double o = 0.0;
      for (Index j = 0; j < 4; ++j) {
        double v = 0.0;
        for (Index b = 0; b < 4; ++b) v += ps.w_v(c, b) * x(j, b);
        o += v * w[std::size_t(j)] / total;
      }
      CHECK(std::abs(fast(i, c) - o) <= 1e-12);
    }
  }

  const Mat a = softmax_attention_matrix(Mat(x * ps.w_q.transpose()), Mat(x * ps.w_k.transpose()));
  for (Index i = 0; i < 4; ++i) CHECK(std::abs(a.row(i).sum() - 1.0) <= 1e-15);
  const Mat ac = softmax_attention_matrix(Mat(x * ps.w_q.transpose()), Mat(x * ps.w_k.transpose()), true);
  for (Index i = 0; i < 4; ++i) {
    CHECK(std::abs(ac.row(i).sum() - 1.0) <= 1e-15);
    for (Index j = i + 1; j < 4; ++j) CHECK(ac(i, j) == 0.0);
  }
  CHECK_THROWS_AS(canonical_forward(x, ProjectionSet<double>{ps.w_q, ps.w_k, {}}), ShapeError);
}

TEST_CASE("multi-head assembly") {
  Rng rng(27);
  const Index d = 4, s = 2, dv = 3;
  const auto fmap = FeatureMapSpec<double>::cosine(d);
  const Mat x = randn(5, d, rng);
  const auto h0 = random_head(rng, d, d, d, s, ProjectionMode::DataIndependent);
  const OutputMap<double> o0{randn(dv, 2 * s, rng)};
  const Mat single = primal_forward(x, h0, fmap, o0).projected;
  CHECK(multi_head_forward<double>(x, {h0}, fmap, {o0}, Mat::Identity(dv, dv)) == single);

  const Mat twin = multi_head_forward<double>(x, {h0, h0}, fmap, {o0, o0}, Mat::Identity(2 * dv, 2 * dv));
  CHECK(twin.leftCols(dv) == twin.rightCols(dv));

  const auto h1 = random_head(rng, d, d, d, s, ProjectionMode::DataDependent, 1, false, 6);
  const OutputMap<double> o1{randn(dv, 2 * s, rng)};
  const Mat mixer = randn(d, 2 * dv, rng);
  const Mat got = multi_head_forward<double>(x, {h0, h1}, fmap, {o0, o1}, mixer);
  const Mat b1 = primal_forward(x, h1, fmap, o1).projected;
  Mat oracle = Mat::Zero(5, d);
  for (Index i = 0; i < 5; ++i)
    for (Index r = 0; r < d; ++r)
      for (Index c = 0; c < dv; ++c) oracle(i, r) += mixer(r, c) * single(i, c) + mixer(r, dv + c) * b1(i, c);
  CHECK((got - oracle).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(multi_head_forward<double>(x, {h0}, fmap, {o0}, Mat::Identity(2, 2)), ShapeError);
}

TEST_CASE("instrumented cost model") {
  Rng rng(28);
  const Index d = 8, s = 3, dv = 5;
  const auto fmap = FeatureMapSpec<double>::cosine(d);
  const auto h = random_head(rng, d, d, d, s, ProjectionMode::DataIndependent);
  const OutputMap<double> wo{randn(dv, 2 * s, rng)};
  ProjectionSet<double> ps{randn(d, d, rng), randn(d, d, rng), randn(dv, d, rng)};
  auto primal_flops = [&](Index n) {
    FlopCounter c;
    primal_forward(randn(n, d, rng), h, fmap, wo, &c);
    return c;
  };
  auto canonical_flops = [&](Index n) {
    FlopCounter c;
    canonical_forward(randn(n, d, rng), ps, false, &c);
    return c;
  };
  for (Index n : {16, 64, 256}) {
    const auto p1 = primal_flops(n), p2 = primal_flops(2 * n);
    CHECK(p1.attention == std::uint64_t(n) * (2 * 2 * d + 2 * d * s + 2 * s * dv));
    CHECK(double(p2.attention) / double(p1.attention) == 2.0);
    CHECK(double(p2.buffer_bytes) / double(p1.buffer_bytes) == 2.0);
    const auto c1 = canonical_flops(n), c2 = canonical_flops(2 * n);
    CHECK(c1.attention == std::uint64_t(n * n) * (d + 1 + dv));
    CHECK(double(c2.attention) / double(c1.attention) == 4.0);
  }

  // data-dependent: per-call fold is n*p*s per weight and separate from the N-linear part
  const auto dd = random_head(rng, d, d, d, s, ProjectionMode::DataDependent, 2, false, 6);
  FlopCounter c;
  primal_forward(randn(40, d, rng), dd, fmap, wo, &c);
  CHECK(c.fold == std::uint64_t(2 * 6 * d * s));
  CHECK(c.attention == std::uint64_t(40) * (2 * 2 * d + 2 * d * s + 2 * s * dv));
}
