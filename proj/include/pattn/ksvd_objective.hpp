#ifndef PATTN_KSVD_OBJECTIVE_HPP
#define PATTN_KSVD_OBJECTIVE_HPP

#include <vector>

#include "pattn/attention.hpp"
#include "pattn/linalg.hpp"

namespace pattn {

/// J = 1/2 sum_i e_i^T Lambda e_i + 1/2 sum_j r_j^T Lambda r_j - Tr(W_e^T W_r).
/// `w_e`, `w_r` are the raw parameters (not the folded W_{e|X}).
template <typename Scalar>
Scalar ksvd_objective(const MatrixX<Scalar>& e_scores, const MatrixX<Scalar>& r_scores,
                      const MatrixX<Scalar>& w_e, const MatrixX<Scalar>& w_r,
                      const VectorX<Scalar>& lambda) {
  const Index s = lambda.size();
  detail::require_shape(e_scores.cols() == s && r_scores.cols() == s, "ksvd_objective: scores need s columns");
  detail::require_shape(e_scores.rows() == r_scores.rows(), "ksvd_objective: e and r token counts differ");
  detail::require_shape(w_e.cols() == s && w_r.cols() == s && w_e.rows() == w_r.rows(),
                        "ksvd_objective: W_e and W_r must share an n x s shape");
  const Scalar e_term = (e_scores.array().square().colwise().sum().transpose() * lambda.array()).sum();
  const Scalar r_term = (r_scores.array().square().colwise().sum().transpose() * lambda.array()).sum();
  const Scalar trace = (w_e.array() * w_r.array()).sum();
  return e_term / Scalar(2) + r_term / Scalar(2) - trace;
}

/// The squared-norm form: 1/2 sum_i ||(W_{e|X} Lambda^1/2)^T phi_q(x_i)||^2
/// + 1/2 sum_j ||(W_{r|X} Lambda^1/2)^T phi_k(x_j)||^2 - Tr(W_e^T W_r).
template <typename Scalar>
Scalar ksvd_objective_norm_form(const MatrixX<Scalar>& phi_q, const MatrixX<Scalar>& phi_k,
                                const MatrixX<Scalar>& w_e_folded, const MatrixX<Scalar>& w_r_folded,
                                const MatrixX<Scalar>& w_e, const MatrixX<Scalar>& w_r,
                                const VectorX<Scalar>& lambda) {
  const VectorX<Scalar> root = lambda.array().sqrt().matrix();
  const MatrixX<Scalar> we = w_e_folded * root.asDiagonal();
  const MatrixX<Scalar> wr = w_r_folded * root.asDiagonal();
  Scalar total = 0;
  for (Index i = 0; i < phi_q.rows(); ++i) total += (we.transpose() * phi_q.row(i).transpose()).squaredNorm() / Scalar(2);
  for (Index j = 0; j < phi_k.rows(); ++j) total += (wr.transpose() * phi_k.row(j).transpose()).squaredNorm() / Scalar(2);
  return total - (w_e.transpose() * w_r).trace();
}

/// J for one head on input x, using the same F_X and weight rows as the
/// forward pass.
template <typename Scalar>
Scalar head_objective(const MatrixX<Scalar>& x, const HeadParams<Scalar>& params,
                      const FeatureMapSpec<Scalar>& fmap, bool normalize = true) {
  const OutputMap<Scalar> sink{MatrixX<Scalar>::Zero(1, 2 * params.directions())};
  const auto out = primal_forward(x, params, fmap, sink, nullptr, normalize);
  return ksvd_objective(out.e_scores, out.r_scores, params.raw_e(x.rows()), params.raw_r(x.rows()),
                        params.lambda());
}

/// Per-head J values grouped by layer, their per-layer means, and the penalty
/// eta * sum_l J_l^2.
struct KsvdLossReport {
  std::vector<std::vector<double>> per_head_j;
  std::vector<double> per_layer_j;
  double penalty = 0.0;
  double eta = 0.0;
};

KsvdLossReport summarize_ksvd(const std::vector<std::vector<double>>& per_head_j, double eta);

/// L + eta * sum_l J_l^2.
double total_loss(double task_loss, const std::vector<double>& per_layer_j, double eta);

}  // namespace pattn

#endif  // PATTN_KSVD_OBJECTIVE_HPP
