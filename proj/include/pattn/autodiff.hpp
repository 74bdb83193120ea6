#ifndef PATTN_AUTODIFF_HPP
#define PATTN_AUTODIFF_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pattn/errors.hpp"

namespace pattn::ad {

using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

class Tape;

/// Handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  Index id = -1;

  const Mat& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
};

/// A primitive. `forward` may cache state (masks, branch patterns) read back
/// by `backward` and `signature`.
class Op {
 public:
  virtual ~Op() = default;
  virtual const char* name() const = 0;
  virtual Mat forward(const std::vector<const Mat*>& in) = 0;
  /// Accumulates into gin[k] for every input whose gin[k] is non-null.
  virtual void backward(const std::vector<const Mat*>& in, const Mat& out, const Mat& gout,
                        const std::vector<Mat*>& gin) const = 0;
  /// Appends the branch pattern of the last forward (ReLU signs, clamp hits).
  virtual void signature(std::vector<std::uint8_t>&) const {}
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Mat value, bool requires_grad = true);
  Var constant(Mat value) { return leaf(std::move(value), false); }
  Var apply(std::shared_ptr<Op> op, const std::vector<Var>& inputs);

  const Mat& value(Var v) const;
  /// Gradient of the last backward pass; zero if the node did not receive one.
  Mat grad(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  Index size() const { return static_cast<Index>(nodes_.size()); }

  /// Overwrites a leaf value (same shape) ahead of `replay`.
  void set_value(Var leaf, const Mat& value);
  /// Recomputes every non-leaf node in recording order.
  void replay();
  /// Reverse accumulation from a 1x1 loss. A tape supports one backward pass.
  void backward(Var loss);
  bool consumed() const { return consumed_; }

  std::vector<std::uint8_t> signature() const;

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::vector<Index> inputs;
    std::shared_ptr<Op> op;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;
  void check_var(Var v, const char* what) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Linear algebra
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double c);
Var hadamard(Var a, Var b);
/// a (N x m) + b (1 x m) on every row.
Var add_row(Var a, Var b);
/// a (N x m) + c (N x 1) on every column.
Var add_col(Var a, Var c);
/// Row i of a (N x m) scaled by c(i) (N x 1).
Var row_scale(Var a, Var c);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var gather_rows(Var a, std::vector<Index> rows);
Var slice_rows(Var a, Index start, Index count);

// Reductions
Var col_sum(Var a);
Var sum_all(Var a);
Var mean_rows(Var a);
Var row_sq_norm(Var a);
/// (N x m), (N x m) -> N x 1 of row inner products.
Var row_dot(Var a, Var b);
/// Row i = sum of rows 0..i.
Var cumsum_rows(Var a);
Var trace_atb(Var a, Var b);

// Elementwise
Var exp(Var a);
Var pow(Var a, double exponent);
Var relu(Var a);

// Row-wise maps
/// z / max(||z||, eps).
Var row_normalize(Var a, double eps = 1e-12);
/// softmax(scale * a) per row; entries above the diagonal are excluded when causal.
Var row_softmax(Var a, double scale, bool causal);
/// Zeroes the strict upper triangle.
Var mask_lower(Var a);
/// (z - mean) / sqrt(var + eps) per row.
Var row_standardize(Var a, double eps = 1e-5);

// Losses
/// Mean softmax cross-entropy of logits (B x C) against class ids.
Var cross_entropy(Var logits, std::vector<Index> labels);
/// Mean of squared differences over all entries.
Var mse(Var pred, Var target);

}  // namespace pattn::ad

#endif  // PATTN_AUTODIFF_HPP
