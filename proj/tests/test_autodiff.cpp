#include "doctest.h"
#include "pattn/autodiff.hpp"
#include "pattn/gradcheck.hpp"
#include "test_util.hpp"

using namespace pattn;
using namespace pattn::testing;

namespace {

GradCheckReport check_unary(const std::function<ad::Var(ad::Var)>& f, const Mat& x, std::uint64_t seed = 1,
                            double step = 1e-4) {
  GradCheckOptions opts;
  opts.step = step;
  return gradcheck(
      [&](ad::Tape& tape, const LeafMap& leaves) {
        const ad::Var y = f(leaves.at("x"));
        Rng w_rng(seed + 100);
        const ad::Var w = tape.constant(randn(y.rows(), y.cols(), w_rng));
        return ad::sum_all(ad::hadamard(y, w));
      },
      {{"x", x}}, opts);
}

}  // namespace

TEST_CASE("half squared norm has gradient W") {
  Rng rng(50);
  const Mat w = randn(4, 3, rng);
  ad::Tape tape;
  const ad::Var v = tape.leaf(w);
  const ad::Var loss = ad::scale(ad::sum_all(ad::hadamard(v, v)), 0.5);
  tape.backward(loss);
  CHECK(tape.grad(v) == w);
}

TEST_CASE("trace gradient is the other factor") {
  Rng rng(51);
  const Mat we = randn(5, 2, rng), wr = randn(5, 2, rng);
  ad::Tape tape;
  const ad::Var a = tape.leaf(we), b = tape.leaf(wr);
  tape.backward(ad::trace_atb(a, b));
  CHECK(tape.grad(a) == wr);
  CHECK(tape.grad(b) == we);
}

TEST_CASE("forward values match direct formulas") {
  Rng rng(52);
  const Mat a = randn(4, 3, rng), b = randn(3, 5, rng);
  ad::Tape tape;
  const ad::Var va = tape.constant(a), vb = tape.constant(b);
  CHECK((ad::matmul(va, vb).value() - triple_loop(a, b)).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(ad::row_normalize(va).value() == apply_feature_map_rows(FeatureMapSpec<double>::cosine(3), a));

  const Mat scores = randn(4, 4, rng);
  const ad::Mat soft = ad::row_softmax(tape.constant(scores), 0.5, true).value();
  for (Index i = 0; i < 4; ++i) {
    CHECK(soft.row(i).sum() == doctest::Approx(1.0).epsilon(1e-15));
    for (Index j = i + 1; j < 4; ++j) CHECK(soft(i, j) == 0.0);
  }
  const Mat q = randn(4, 3, rng), k = randn(4, 3, rng);
  const ad::Mat attn = ad::row_softmax(ad::matmul(tape.constant(q), ad::transpose(tape.constant(k))),
                                       1.0 / std::sqrt(3.0), false)
                           .value();
  CHECK((attn - softmax_attention_matrix(q, k)).cwiseAbs().maxCoeff() <= 1e-15);

  const ad::Mat std_rows = ad::row_standardize(va).value();
  for (Index i = 0; i < 4; ++i) {
    CHECK(std::abs(std_rows.row(i).mean()) <= 1e-15);
    const double var = std_rows.row(i).squaredNorm() / 3.0;
    const double raw_var = (a.row(i).array() - a.row(i).mean()).square().mean();
    CHECK(var == doctest::Approx(raw_var / (raw_var + 1e-5)).epsilon(1e-12));
  }

  const ad::Mat cum = ad::cumsum_rows(va).value();
  CHECK((cum.row(3) - a.colwise().sum()).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(ad::cross_entropy(tape.constant(Mat::Zero(3, 4)), {0, 1, 3}).value()(0, 0) == doctest::Approx(std::log(4.0)));
  CHECK(ad::mse(va, tape.constant(Mat::Zero(4, 3))).value()(0, 0) == doctest::Approx(a.squaredNorm() / 12.0));
  CHECK(ad::mask_lower(tape.constant(Mat::Ones(3, 3))).value() == Mat(Mat::Ones(3, 3).triangularView<Eigen::Lower>()));
}

TEST_CASE("primitive gradients match finite differences") {
  Rng rng(53);
  const Mat x = randn(5, 4, rng);
  const Mat other = randn(4, 3, rng);
  const Mat same_shape = randn(5, 4, rng);
  const Mat col = randn(5, 1, rng);
  const Mat row = randn(1, 4, rng);
  Mat far_from_zero = x;
  for (Index k = 0; k < far_from_zero.size(); ++k)
    if (std::abs(far_from_zero(k)) < 0.05) far_from_zero(k) = 0.5;

  struct Case {
    std::string name;
    std::function<ad::Var(ad::Var)> f;
    Mat input;
  };
  const std::vector<Case> cases = {
      {"matmul", [&](ad::Var v) { return ad::matmul(v, v.tape->constant(other)); }, x},
      {"matmul_right", [&](ad::Var v) { return ad::matmul(v.tape->constant(other), v); }, Mat(randn(3, 2, rng))},
      {"transpose", [](ad::Var v) { return ad::transpose(v); }, x},
      {"hadamard", [&](ad::Var v) { return ad::hadamard(v, v); }, x},
      {"sub", [&](ad::Var v) { return ad::sub(v.tape->constant(same_shape), ad::scale(v, 2.0)); }, x},
      {"add_row", [&](ad::Var v) { return ad::add_row(v.tape->constant(x), v); }, row},
      {"add_col", [&](ad::Var v) { return ad::add_col(v.tape->constant(x), v); }, col},
      {"row_scale_left", [&](ad::Var v) { return ad::row_scale(v, v.tape->constant(col)); }, x},
      {"row_scale_right", [&](ad::Var v) { return ad::row_scale(v.tape->constant(x), v); }, col},
      {"concat", [&](ad::Var v) { return ad::concat_cols({v, ad::scale(v, 3.0)}); }, x},
      {"concat_rows", [&](ad::Var v) { return ad::concat_rows({v, ad::hadamard(v, v)}); }, x},
      {"gather", [](ad::Var v) { return ad::gather_rows(v, {4, 0, 4, 2}); }, x},
      {"slice", [](ad::Var v) { return ad::slice_rows(v, 1, 3); }, x},
      {"col_sum", [](ad::Var v) { return ad::col_sum(v); }, x},
      {"mean_rows", [](ad::Var v) { return ad::mean_rows(v); }, x},
      {"row_sq_norm", [](ad::Var v) { return ad::row_sq_norm(v); }, x},
      {"row_dot", [&](ad::Var v) { return ad::row_dot(v, ad::exp(v)); }, x},
      {"cumsum", [](ad::Var v) { return ad::cumsum_rows(v); }, x},
      {"trace", [&](ad::Var v) { return ad::trace_atb(v, ad::hadamard(v, v)); }, x},
      {"exp", [](ad::Var v) { return ad::exp(v); }, x},
      {"pow", [](ad::Var v) { return ad::pow(v, -0.5); }, Mat(x.array().abs() + 0.5)},
      {"relu", [](ad::Var v) { return ad::relu(v); }, far_from_zero},
      {"cosine", [](ad::Var v) { return ad::row_normalize(v); }, x},
      {"softmax", [](ad::Var v) { return ad::row_softmax(v, 0.7, false); }, Mat(randn(4, 4, rng))},
      {"softmax_causal", [](ad::Var v) { return ad::row_softmax(v, 0.7, true); }, Mat(randn(4, 4, rng))},
      {"mask_lower", [](ad::Var v) { return ad::mask_lower(v); }, Mat(randn(4, 4, rng))},
      {"standardize", [](ad::Var v) { return ad::row_standardize(v); }, x},
      {"cross_entropy", [](ad::Var v) { return ad::cross_entropy(v, {0, 2, 1, 3, 3}); }, x},
      {"mse", [&](ad::Var v) { return ad::mse(v, v.tape->constant(same_shape)); }, x},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const auto rep = check_unary(c.f, c.input);
    CHECK(rep.passed());
    CHECK(rep.max_rel_error() <= 1e-4);
  }
}

TEST_CASE("cosine gradient is certified away from the origin") {
  Rng rng(54);
  for (int t = 0; t < 20; ++t) {
    Mat z = randn(3, 4, rng);
    for (Index i = 0; i < 3; ++i) z.row(i) *= std::pow(10.0, -3.0 + 4.0 * rng.uniform()) / z.row(i).norm();
    const double step = 1e-4 * std::min(1.0, z.rowwise().norm().minCoeff());
    CHECK(check_unary([](ad::Var v) { return ad::row_normalize(v); }, z, 7, step).max_rel_error() <= 1e-4);
  }
}

TEST_CASE("relu crossing is reported through the branch signature") {
  ad::Tape tape;
  const ad::Var x = tape.leaf(Mat::Constant(1, 2, 0.5));
  const ad::Var y = ad::sum_all(ad::relu(x));
  const auto before = tape.signature();
  Mat moved(1, 2);
  moved << -0.5, 0.5;
  tape.set_value(x, moved);
  tape.replay();
  CHECK(tape.signature() != before);
  CHECK(y.value()(0, 0) == 0.5);
}

TEST_CASE("replay reproduces values bit for bit") {
  Rng rng(55);
  ad::Tape tape;
  const ad::Var a = tape.leaf(randn(6, 4, rng));
  const ad::Var b = tape.leaf(randn(4, 6, rng));
  const ad::Var loss = ad::sum_all(ad::row_softmax(ad::matmul(ad::row_standardize(a), b), 0.3, true));
  const double first = loss.value()(0, 0);
  tape.replay();
  CHECK(loss.value()(0, 0) == first);
}

TEST_CASE("tape integrity errors") {
  ad::Tape tape, other;
  const ad::Var a = tape.leaf(Mat::Ones(2, 2));
  const ad::Var foreign = other.leaf(Mat::Ones(2, 2));
  CHECK_THROWS_AS(tape.backward(a), IntegrityError);
  CHECK_THROWS_AS(tape.backward(foreign), IntegrityError);
  CHECK_THROWS_AS(ad::add(a, foreign), IntegrityError);
  CHECK_THROWS_AS(tape.set_value(a, Mat::Ones(3, 2)), IntegrityError);
  CHECK_THROWS_AS(tape.backward(ad::Var{&tape, 99}), IntegrityError);
  CHECK_THROWS_AS(ad::exp(ad::Var{}), IntegrityError);

  const ad::Var loss = ad::sum_all(a);
  CHECK_THROWS_AS(tape.set_value(loss, Mat::Ones(1, 1)), IntegrityError);
  tape.backward(loss);
  CHECK(tape.consumed());
  CHECK_THROWS_AS(tape.backward(loss), IntegrityError);
  CHECK_THROWS_AS(ad::exp(a), IntegrityError);
  CHECK(tape.grad(a) == Mat::Ones(2, 2));
}

TEST_CASE("shape errors propagate from primitives") {
  ad::Tape tape;
  const ad::Var a = tape.leaf(Mat::Ones(2, 3));
  CHECK_THROWS_AS(ad::matmul(a, a), ShapeError);
  CHECK_THROWS_AS(ad::add(a, tape.leaf(Mat::Ones(3, 2))), ShapeError);
  CHECK_THROWS_AS(ad::cross_entropy(a, {0}), ShapeError);
  CHECK_THROWS_AS(ad::cross_entropy(a, {0, 3}), ShapeError);
  CHECK_THROWS_AS(ad::gather_rows(a, {2}), ShapeError);
}

TEST_CASE("relative error") {
  CHECK(relative_error(1.0, 1.0, 1e-8) == 0.0);
  CHECK(relative_error(0.0, 0.0, 0.0) == 0.0);
  CHECK(relative_error(2.0, 1.0, 1e-8) == 0.5);
  CHECK(relative_error(1e-12, 0.0, 1e-8) == doctest::Approx(1e-4));
}
