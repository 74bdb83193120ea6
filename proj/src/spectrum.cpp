#include "pattn/spectrum.hpp"

#include <sstream>

#include "pattn/csv.hpp"
#include "pattn/dual_oracle.hpp"

namespace pattn {

Index SpectrumReport::effective_rank(double tau) const {
  for (Index k = 0; k < explained_variance.size(); ++k)
    if (explained_variance(k) >= tau) return k + 1;
  return explained_variance.size();
}

std::string SpectrumReport::csv() const {
  std::ostringstream os;
  os << "k,sigma_k,cum_explained_variance\n";
  for (Index k = 0; k < singular_values.size(); ++k)
    os << k + 1 << ',' << format_double(singular_values(k)) << ',' << format_double(explained_variance(k)) << '\n';
  return os.str();
}

SpectrumReport spectrum(const MatrixX<double>& m) {
  require_finite(m, "spectrum input");
  SpectrumReport rep;
  rep.singular_values = svd(m).sigma;
  const Index r = rep.singular_values.size();
  rep.explained_variance = VectorX<double>::Zero(r);
  rep.explained_sigma = VectorX<double>::Zero(r);
  double total_sq = 0.0, total = 0.0;
  for (Index k = 0; k < r; ++k) {
    total_sq += rep.singular_values(k) * rep.singular_values(k);
    total += rep.singular_values(k);
  }
  if (total_sq == 0.0) return rep;
  double acc_sq = 0.0, acc = 0.0;
  for (Index k = 0; k < r; ++k) {
    acc_sq += rep.singular_values(k) * rep.singular_values(k);
    acc += rep.singular_values(k);
    rep.explained_variance(k) = acc_sq / total_sq;
    rep.explained_sigma(k) = acc / total;
  }
  return rep;
}

MatrixX<double> attention_matrix(const Model& model, Index layer, Index head, const MatrixX<double>& layer_input) {
  if (layer < 0 || layer >= model.config.layers || head < 0 || head >= model.config.heads)
    throw ConfigError("spectrum: layer or head out of range");
  if (model.config.kind(layer) == AttentionKind::Primal)
    return build_kernel(layer_input, model.head_params(layer, head), model.feature_map(layer, head));
  const auto proj = project(model.projections(layer, head), layer_input);
  return softmax_attention_matrix(proj.q, proj.k, model.config.causal);
}

double mean_effective_rank(const Model& model, const Batch& batch, Index layer, Index head, double tau) {
  ad::Tape tape;
  const auto res = forward_loss(model, batch, tape);
  double total = 0.0;
  const auto& inputs = res.layer_inputs.at(static_cast<std::size_t>(layer));
  for (const auto& x : inputs)
    total += static_cast<double>(spectrum(attention_matrix(model, layer, head, x)).effective_rank(tau));
  return total / static_cast<double>(inputs.size());
}

}  // namespace pattn
