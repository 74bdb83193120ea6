#include "pattn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace pattn::ad {

namespace {

// Column-at-a-time product: every output entry accumulates over the inner
// index in order, and row i of the result depends on row i of `a` only.
Mat product(const Mat& a, const Mat& b) {
  Mat out = Mat::Zero(a.rows(), b.cols());
  for (Index j = 0; j < b.cols(); ++j)
    for (Index k = 0; k < a.cols(); ++k) {
      const double bkj = b(k, j);
      for (Index i = 0; i < a.rows(); ++i) out(i, j) += a(i, k) * bkj;
    }
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void accumulate(Mat* g, const Mat& delta) {
  if (g) *g += delta;
}

class MatMulOp final : public Op {
 public:
  const char* name() const override { return "matmul"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    require(in[0]->cols() == in[1]->rows(), "matmul: inner dimensions differ");
    return product(*in[0], *in[1]);
  }
  void backward(const std::vector<const Mat*>& in, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    if (gin[0]) *gin[0] += product(g, in[1]->transpose());
    if (gin[1]) *gin[1] += product(in[0]->transpose(), g);
  }
};

class TransposeOp final : public Op {
 public:
  const char* name() const override { return "transpose"; }
  Mat forward(const std::vector<const Mat*>& in) override { return in[0]->transpose(); }
  void backward(const std::vector<const Mat*>&, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    accumulate(gin[0], g.transpose());
  }
};

class AddOp final : public Op {
 public:
  explicit AddOp(double sign) : sign_(sign) {}
  const char* name() const override { return sign_ > 0 ? "add" : "sub"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    require(in[0]->rows() == in[1]->rows() && in[0]->cols() == in[1]->cols(), "add: shapes differ");
    return *in[0] + sign_ * *in[1];
  }
  void backward(const std::vector<const Mat*>&, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    accumulate(gin[0], g);
    accumulate(gin[1], sign_ * g);
  }

 private:
  double sign_;
};

class ScaleOp final : public Op {
 public:
  explicit ScaleOp(double c) : c_(c) {}
  const char* name() const override { return "scale"; }
  Mat forward(const std::vector<const Mat*>& in) override { return c_ * *in[0]; }
  void backward(const std::vector<const Mat*>&, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    accumulate(gin[0], c_ * g);
  }

 private:
  double c_;
};

class HadamardOp final : public Op {
 public:
  const char* name() const override { return "hadamard"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    require(in[0]->rows() == in[1]->rows() && in[0]->cols() == in[1]->cols(), "hadamard: shapes differ");
    return in[0]->cwiseProduct(*in[1]);
  }
  void backward(const std::vector<const Mat*>& in, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    accumulate(gin[0], g.cwiseProduct(*in[1]));
    accumulate(gin[1], g.cwiseProduct(*in[0]));
  }
};

class AddRowOp final : public Op {
 public:
  const char* name() const override { return "add_row"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    require(in[1]->rows() == 1 && in[1]->cols() == in[0]->cols(), "add_row: bias must be 1 x m");
    return in[0]->rowwise() + in[1]->row(0);
  }
  void backward(const std::vector<const Mat*>&, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    accumulate(gin[0], g);
    accumulate(gin[1], g.colwise().sum());
  }
};

class AddColOp final : public Op {
 public:
  const char* name() const override { return "add_col"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    require(in[1]->cols() == 1 && in[1]->rows() == in[0]->rows(), "add_col: shift must be N x 1");
    return in[0]->colwise() + in[1]->col(0);
  }
  void backward(const std::vector<const Mat*>&, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    accumulate(gin[0], g);
    accumulate(gin[1], g.rowwise().sum());
  }
};

class RowScaleOp final : public Op {
 public:
  const char* name() const override { return "row_scale"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    require(in[1]->cols() == 1 && in[1]->rows() == in[0]->rows(), "row_scale: scale must be N x 1");
    return in[1]->col(0).asDiagonal() * *in[0];
  }
  void backward(const std::vector<const Mat*>& in, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    accumulate(gin[0], in[1]->col(0).asDiagonal() * g);
    accumulate(gin[1], g.cwiseProduct(*in[0]).rowwise().sum());
  }
};

class ConcatOp final : public Op {
 public:
  explicit ConcatOp(bool columns) : columns_(columns) {}
  const char* name() const override { return columns_ ? "concat_cols" : "concat_rows"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    Index total = 0;
    for (const Mat* m : in) {
      require(columns_ ? m->rows() == in[0]->rows() : m->cols() == in[0]->cols(), "concat: shapes differ");
      total += columns_ ? m->cols() : m->rows();
    }
    Mat out = columns_ ? Mat(in[0]->rows(), total) : Mat(total, in[0]->cols());
    Index at = 0;
    for (const Mat* m : in) {
      if (columns_) {
        out.middleCols(at, m->cols()) = *m;
        at += m->cols();
      } else {
        out.middleRows(at, m->rows()) = *m;
        at += m->rows();
      }
    }
    return out;
  }
  void backward(const std::vector<const Mat*>& in, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    Index at = 0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      const Index w = columns_ ? in[k]->cols() : in[k]->rows();
      if (gin[k]) *gin[k] += columns_ ? Mat(g.middleCols(at, w)) : Mat(g.middleRows(at, w));
      at += w;
    }
  }

 private:
  bool columns_;
};

class GatherRowsOp final : public Op {
 public:
  explicit GatherRowsOp(std::vector<Index> rows) : rows_(std::move(rows)) {}
  const char* name() const override { return "gather_rows"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    Mat out(static_cast<Index>(rows_.size()), in[0]->cols());
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      require(rows_[r] >= 0 && rows_[r] < in[0]->rows(), "gather_rows: index out of range");
      out.row(static_cast<Index>(r)) = in[0]->row(rows_[r]);
    }
    return out;
  }
  void backward(const std::vector<const Mat*>&, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    if (!gin[0]) return;
    for (std::size_t r = 0; r < rows_.size(); ++r) gin[0]->row(rows_[r]) += g.row(static_cast<Index>(r));
  }

 private:
  std::vector<Index> rows_;
};

class ColSumOp final : public Op {
 public:
  const char* name() const override { return "col_sum"; }
  Mat forward(const std::vector<const Mat*>& in) override { return in[0]->colwise().sum(); }
  void backward(const std::vector<const Mat*>& in, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    if (gin[0]) gin[0]->rowwise() += g.row(0);
    (void)in;
  }
};

class SumAllOp final : public Op {
 public:
  const char* name() const override { return "sum_all"; }
  Mat forward(const std::vector<const Mat*>& in) override { return Mat::Constant(1, 1, in[0]->sum()); }
  void backward(const std::vector<const Mat*>&, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    if (gin[0]) gin[0]->array() += g(0, 0);
  }
};

class MeanRowsOp final : public Op {
 public:
  const char* name() const override { return "mean_rows"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    require(in[0]->rows() > 0, "mean_rows: empty input");
    return in[0]->colwise().sum() / static_cast<double>(in[0]->rows());
  }
  void backward(const std::vector<const Mat*>& in, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    if (gin[0]) gin[0]->rowwise() += g.row(0) / static_cast<double>(in[0]->rows());
  }
};

class RowSqNormOp final : public Op {
 public:
  const char* name() const override { return "row_sq_norm"; }
  Mat forward(const std::vector<const Mat*>& in) override { return in[0]->rowwise().squaredNorm(); }
  void backward(const std::vector<const Mat*>& in, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    accumulate(gin[0], 2.0 * (g.col(0).asDiagonal() * *in[0]));
  }
};

class RowDotOp final : public Op {
 public:
  const char* name() const override { return "row_dot"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    require(in[0]->rows() == in[1]->rows() && in[0]->cols() == in[1]->cols(), "row_dot: shapes differ");
    return in[0]->cwiseProduct(*in[1]).rowwise().sum();
  }
  void backward(const std::vector<const Mat*>& in, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    accumulate(gin[0], g.col(0).asDiagonal() * *in[1]);
    accumulate(gin[1], g.col(0).asDiagonal() * *in[0]);
  }
};

class CumsumRowsOp final : public Op {
 public:
  const char* name() const override { return "cumsum_rows"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    Mat out = *in[0];
    for (Index i = 1; i < out.rows(); ++i) out.row(i) += out.row(i - 1);
    return out;
  }
  void backward(const std::vector<const Mat*>&, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    if (!gin[0]) return;
    Mat rev = g;
    for (Index i = rev.rows() - 2; i >= 0; --i) rev.row(i) += rev.row(i + 1);
    *gin[0] += rev;
  }
};

class TraceAtBOp final : public Op {
 public:
  const char* name() const override { return "trace_atb"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    require(in[0]->rows() == in[1]->rows() && in[0]->cols() == in[1]->cols(), "trace_atb: shapes differ");
    return Mat::Constant(1, 1, in[0]->cwiseProduct(*in[1]).sum());
  }
  void backward(const std::vector<const Mat*>& in, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    accumulate(gin[0], g(0, 0) * *in[1]);
    accumulate(gin[1], g(0, 0) * *in[0]);
  }
};

class ExpOp final : public Op {
 public:
  const char* name() const override { return "exp"; }
  Mat forward(const std::vector<const Mat*>& in) override { return in[0]->array().exp().matrix(); }
  void backward(const std::vector<const Mat*>&, const Mat& out, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    accumulate(gin[0], g.cwiseProduct(out));
  }
};

class PowOp final : public Op {
 public:
  explicit PowOp(double e) : e_(e) {}
  const char* name() const override { return "pow"; }
  Mat forward(const std::vector<const Mat*>& in) override { return in[0]->array().pow(e_).matrix(); }
  void backward(const std::vector<const Mat*>& in, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    accumulate(gin[0], (g.array() * e_ * in[0]->array().pow(e_ - 1.0)).matrix());
  }

 private:
  double e_;
};

class ReluOp final : public Op {
 public:
  const char* name() const override { return "relu"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    mask_.assign(static_cast<std::size_t>(in[0]->size()), 0);
    Mat out = *in[0];
    for (Index k = 0; k < out.size(); ++k) {
      if (out(k) > 0.0) {
        mask_[static_cast<std::size_t>(k)] = 1;
      } else {
        out(k) = 0.0;
      }
    }
    return out;
  }
  void backward(const std::vector<const Mat*>&, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    if (!gin[0]) return;
    for (Index k = 0; k < g.size(); ++k)
      if (mask_[static_cast<std::size_t>(k)]) (*gin[0])(k) += g(k);
  }
  void signature(std::vector<std::uint8_t>& out) const override {
    out.insert(out.end(), mask_.begin(), mask_.end());
  }

 private:
  std::vector<std::uint8_t> mask_;
};

class RowNormalizeOp final : public Op {
 public:
  explicit RowNormalizeOp(double eps) : eps_(eps) {}
  const char* name() const override { return "row_normalize"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    const Mat& z = *in[0];
    norms_.resize(z.rows());
    clamped_.assign(static_cast<std::size_t>(z.rows()), 0);
    Mat out(z.rows(), z.cols());
    for (Index i = 0; i < z.rows(); ++i) {
      const double n = z.row(i).norm();
      norms_(i) = n;
      const bool clamp = !(n > eps_);
      clamped_[static_cast<std::size_t>(i)] = clamp;
      out.row(i) = z.row(i) / (clamp ? eps_ : n);
    }
    return out;
  }
  void backward(const std::vector<const Mat*>&, const Mat& out, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    if (!gin[0]) return;
    for (Index i = 0; i < g.rows(); ++i) {
      if (clamped_[static_cast<std::size_t>(i)]) {
        gin[0]->row(i) += g.row(i) / eps_;
      } else {
        const double proj = out.row(i).dot(g.row(i));
        gin[0]->row(i) += (g.row(i) - proj * out.row(i)) / norms_(i);
      }
    }
  }
  void signature(std::vector<std::uint8_t>& out) const override {
    out.insert(out.end(), clamped_.begin(), clamped_.end());
  }

 private:
  double eps_;
  Eigen::VectorXd norms_;
  std::vector<std::uint8_t> clamped_;
};

class RowSoftmaxOp final : public Op {
 public:
  RowSoftmaxOp(double scale, bool causal) : scale_(scale), causal_(causal) {}
  const char* name() const override { return "row_softmax"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    const Mat& a = *in[0];
    if (causal_) require(a.rows() <= a.cols(), "row_softmax: causal mask needs rows <= cols");
    Mat out = Mat::Zero(a.rows(), a.cols());
    for (Index i = 0; i < a.rows(); ++i) {
      const Index last = causal_ ? i + 1 : a.cols();
      double peak = -HUGE_VAL;
      for (Index j = 0; j < last; ++j) peak = std::max(peak, scale_ * a(i, j));
      double total = 0.0;
      for (Index j = 0; j < last; ++j) total += out(i, j) = std::exp(scale_ * a(i, j) - peak);
      for (Index j = 0; j < last; ++j) out(i, j) /= total;
    }
    return out;
  }
  void backward(const std::vector<const Mat*>&, const Mat& out, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    if (!gin[0]) return;
    for (Index i = 0; i < g.rows(); ++i) {
      const Index last = causal_ ? i + 1 : g.cols();
      double inner = 0.0;
      for (Index j = 0; j < last; ++j) inner += g(i, j) * out(i, j);
      for (Index j = 0; j < last; ++j) (*gin[0])(i, j) += scale_ * out(i, j) * (g(i, j) - inner);
    }
  }

 private:
  double scale_;
  bool causal_;
};

class MaskLowerOp final : public Op {
 public:
  const char* name() const override { return "mask_lower"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    return in[0]->triangularView<Eigen::Lower>().toDenseMatrix();
  }
  void backward(const std::vector<const Mat*>&, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    accumulate(gin[0], g.triangularView<Eigen::Lower>().toDenseMatrix());
  }
};

class RowStandardizeOp final : public Op {
 public:
  explicit RowStandardizeOp(double eps) : eps_(eps) {}
  const char* name() const override { return "row_standardize"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    const Mat& x = *in[0];
    require(x.cols() > 0, "row_standardize: empty rows");
    inv_sd_.resize(x.rows());
    Mat out(x.rows(), x.cols());
    const double m = static_cast<double>(x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
      const double mean = x.row(i).sum() / m;
      const auto centered = (x.row(i).array() - mean).matrix();
      const double var = centered.squaredNorm() / m;
      inv_sd_(i) = 1.0 / std::sqrt(var + eps_);
      out.row(i) = centered * inv_sd_(i);
    }
    return out;
  }
  void backward(const std::vector<const Mat*>&, const Mat& out, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    if (!gin[0]) return;
    const double m = static_cast<double>(g.cols());
    for (Index i = 0; i < g.rows(); ++i) {
      const double mean_g = g.row(i).sum() / m;
      const double mean_gy = g.row(i).dot(out.row(i)) / m;
      gin[0]->row(i) += inv_sd_(i) * ((g.row(i).array() - mean_g).matrix() - mean_gy * out.row(i));
    }
  }

 private:
  double eps_;
  Eigen::VectorXd inv_sd_;
};

class CrossEntropyOp final : public Op {
 public:
  explicit CrossEntropyOp(std::vector<Index> labels) : labels_(std::move(labels)) {}
  const char* name() const override { return "cross_entropy"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    const Mat& z = *in[0];
    require(static_cast<Index>(labels_.size()) == z.rows() && z.rows() > 0, "cross_entropy: one label per row");
    probs_.resize(z.rows(), z.cols());
    double total = 0.0;
    for (Index i = 0; i < z.rows(); ++i) {
      const Index y = labels_[static_cast<std::size_t>(i)];
      require(y >= 0 && y < z.cols(), "cross_entropy: label out of range");
      const double peak = z.row(i).maxCoeff();
      const auto shifted = (z.row(i).array() - peak).exp();
      const double norm = shifted.sum();
      probs_.row(i) = shifted / norm;
      total += std::log(norm) + peak - z(i, y);
    }
    return Mat::Constant(1, 1, total / static_cast<double>(z.rows()));
  }
  void backward(const std::vector<const Mat*>&, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    if (!gin[0]) return;
    Mat d = probs_;
    for (Index i = 0; i < d.rows(); ++i) d(i, labels_[static_cast<std::size_t>(i)]) -= 1.0;
    *gin[0] += (g(0, 0) / static_cast<double>(d.rows())) * d;
  }

 private:
  std::vector<Index> labels_;
  Mat probs_;
};

class MseOp final : public Op {
 public:
  const char* name() const override { return "mse"; }
  Mat forward(const std::vector<const Mat*>& in) override {
    require(in[0]->rows() == in[1]->rows() && in[0]->cols() == in[1]->cols() && in[0]->size() > 0,
            "mse: shapes differ");
    return Mat::Constant(1, 1, (*in[0] - *in[1]).squaredNorm() / static_cast<double>(in[0]->size()));
  }
  void backward(const std::vector<const Mat*>& in, const Mat&, const Mat& g,
                const std::vector<Mat*>& gin) const override {
    const Mat d = (2.0 * g(0, 0) / static_cast<double>(in[0]->size())) * (*in[0] - *in[1]);
    accumulate(gin[0], d);
    accumulate(gin[1], -d);
  }
};

Var unary(std::shared_ptr<Op> op, Var a) {
  if (!a.tape) throw IntegrityError("autodiff: variable is not attached to a tape");
  return a.tape->apply(std::move(op), {a});
}

Var binary(std::shared_ptr<Op> op, Var a, Var b) {
  if (!a.tape) throw IntegrityError("autodiff: variable is not attached to a tape");
  return a.tape->apply(std::move(op), {a, b});
}

Var nary(std::shared_ptr<Op> op, const std::vector<Var>& parts) {
  if (parts.empty() || !parts[0].tape) throw IntegrityError("autodiff: no inputs on a tape");
  return parts[0].tape->apply(std::move(op), parts);
}

}  // namespace

const Mat& Var::value() const {
  if (!tape) throw IntegrityError("autodiff: variable is not attached to a tape");
  return tape->value(*this);
}

void Tape::check_var(Var v, const char* what) const {
  if (v.tape != this) throw IntegrityError(std::string(what) + ": variable belongs to another tape");
  if (v.id < 0 || v.id >= size()) throw IntegrityError(std::string(what) + ": variable id out of range");
}

const Tape::Node& Tape::node(Var v) const {
  check_var(v, "tape");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::leaf(Mat value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, size() - 1};
}

Var Tape::apply(std::shared_ptr<Op> op, const std::vector<Var>& inputs) {
  if (consumed_) throw IntegrityError("tape: cannot record after backward");
  Node n;
  std::vector<const Mat*> in;
  for (Var v : inputs) {
    check_var(v, "apply");
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
    in.push_back(&nodes_[static_cast<std::size_t>(v.id)].value);
  }
  n.value = op->forward(in);
  n.op = std::move(op);
  nodes_.push_back(std::move(n));
  return {this, size() - 1};
}

const Mat& Tape::value(Var v) const { return node(v).value; }

Mat Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::set_value(Var leaf, const Mat& value) {
  check_var(leaf, "set_value");
  Node& n = nodes_[static_cast<std::size_t>(leaf.id)];
  if (n.op) throw IntegrityError("set_value: node is not a leaf");
  if (n.value.rows() != value.rows() || n.value.cols() != value.cols())
    throw IntegrityError("set_value: shape differs from the recorded leaf");
  n.value = value;
}

void Tape::replay() {
  for (Node& n : nodes_) {
    if (!n.op) continue;
    std::vector<const Mat*> in;
    for (Index id : n.inputs) in.push_back(&nodes_[static_cast<std::size_t>(id)].value);
    Mat fresh = n.op->forward(in);
    if (fresh.rows() != n.value.rows() || fresh.cols() != n.value.cols())
      throw IntegrityError(std::string("replay: ") + n.op->name() + " changed shape");
    n.value = std::move(fresh);
  }
}

void Tape::backward(Var loss) {
  check_var(loss, "backward");
  if (consumed_) throw IntegrityError("backward: tape already used");
  const Node& root = nodes_[static_cast<std::size_t>(loss.id)];
  if (root.value.rows() != 1 || root.value.cols() != 1) throw IntegrityError("backward: loss must be 1 x 1");
  consumed_ = true;
  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(loss.id)].grad = Mat::Ones(1, 1);

  for (Index id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.op || !n.requires_grad || n.grad.size() == 0) continue;
    if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols())
      throw IntegrityError(std::string("backward: gradient shape mismatch at ") + n.op->name());
    std::vector<const Mat*> in;
    std::vector<Mat*> gin;
    for (Index input : n.inputs) {
      if (input >= id) throw IntegrityError("backward: node refers forward in the tape");
      Node& src = nodes_[static_cast<std::size_t>(input)];
      in.push_back(&src.value);
      if (src.requires_grad) {
        if (src.grad.size() == 0) src.grad = Mat::Zero(src.value.rows(), src.value.cols());
        gin.push_back(&src.grad);
      } else {
        gin.push_back(nullptr);
      }
    }
    n.op->backward(in, n.value, n.grad, gin);
  }
}

std::vector<std::uint8_t> Tape::signature() const {
  std::vector<std::uint8_t> out;
  for (const Node& n : nodes_)
    if (n.op) n.op->signature(out);
  return out;
}

Var matmul(Var a, Var b) { return binary(std::make_shared<MatMulOp>(), a, b); }
Var transpose(Var a) { return unary(std::make_shared<TransposeOp>(), a); }
Var add(Var a, Var b) { return binary(std::make_shared<AddOp>(1.0), a, b); }
Var sub(Var a, Var b) { return binary(std::make_shared<AddOp>(-1.0), a, b); }
Var scale(Var a, double c) { return unary(std::make_shared<ScaleOp>(c), a); }
Var hadamard(Var a, Var b) { return binary(std::make_shared<HadamardOp>(), a, b); }
Var add_row(Var a, Var b) { return binary(std::make_shared<AddRowOp>(), a, b); }
Var add_col(Var a, Var c) { return binary(std::make_shared<AddColOp>(), a, c); }
Var row_scale(Var a, Var c) { return binary(std::make_shared<RowScaleOp>(), a, c); }
Var concat_cols(const std::vector<Var>& parts) { return nary(std::make_shared<ConcatOp>(true), parts); }
Var concat_rows(const std::vector<Var>& parts) { return nary(std::make_shared<ConcatOp>(false), parts); }
Var gather_rows(Var a, std::vector<Index> rows) { return unary(std::make_shared<GatherRowsOp>(std::move(rows)), a); }

Var slice_rows(Var a, Index start, Index count) {
  std::vector<Index> rows(static_cast<std::size_t>(count));
  for (Index r = 0; r < count; ++r) rows[static_cast<std::size_t>(r)] = start + r;
  return gather_rows(a, std::move(rows));
}

Var col_sum(Var a) { return unary(std::make_shared<ColSumOp>(), a); }
Var sum_all(Var a) { return unary(std::make_shared<SumAllOp>(), a); }
Var mean_rows(Var a) { return unary(std::make_shared<MeanRowsOp>(), a); }
Var row_sq_norm(Var a) { return unary(std::make_shared<RowSqNormOp>(), a); }
Var row_dot(Var a, Var b) { return binary(std::make_shared<RowDotOp>(), a, b); }
Var cumsum_rows(Var a) { return unary(std::make_shared<CumsumRowsOp>(), a); }
Var trace_atb(Var a, Var b) { return binary(std::make_shared<TraceAtBOp>(), a, b); }
Var exp(Var a) { return unary(std::make_shared<ExpOp>(), a); }
Var pow(Var a, double exponent) { return unary(std::make_shared<PowOp>(exponent), a); }
Var relu(Var a) { return unary(std::make_shared<ReluOp>(), a); }
Var row_normalize(Var a, double eps) { return unary(std::make_shared<RowNormalizeOp>(eps), a); }
Var row_softmax(Var a, double scale, bool causal) {
  return unary(std::make_shared<RowSoftmaxOp>(scale, causal), a);
}
Var mask_lower(Var a) { return unary(std::make_shared<MaskLowerOp>(), a); }
Var row_standardize(Var a, double eps) { return unary(std::make_shared<RowStandardizeOp>(eps), a); }
Var cross_entropy(Var logits, std::vector<Index> labels) {
  return unary(std::make_shared<CrossEntropyOp>(std::move(labels)), logits);
}
Var mse(Var pred, Var target) { return binary(std::make_shared<MseOp>(), pred, target); }

}  // namespace pattn::ad
