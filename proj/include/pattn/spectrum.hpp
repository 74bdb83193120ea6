#ifndef PATTN_SPECTRUM_HPP
#define PATTN_SPECTRUM_HPP

#include <string>
#include <vector>

#include "pattn/model.hpp"

namespace pattn {

struct SpectrumReport {
  VectorX<double> singular_values;
  /// Entry k: sum_{i<=k} sigma_i^2 / sum sigma_i^2.
  VectorX<double> explained_variance;
  /// Entry k: sum_{i<=k} sigma_i / sum sigma_i.
  VectorX<double> explained_sigma;

  /// Smallest k (1-based) with explained_variance[k-1] >= tau.
  Index effective_rank(double tau) const;
  /// Columns k, sigma_k, cum_explained_variance.
  std::string csv() const;
};

inline const std::vector<double> kRankThresholds = {0.9, 0.95, 0.99};

SpectrumReport spectrum(const MatrixX<double>& m);

/// Induced kernel of a Primal head (dual-oracle construction) or the softmax
/// attention matrix of a canonical head, on one sequence's layer input.
MatrixX<double> attention_matrix(const Model& model, Index layer, Index head, const MatrixX<double>& layer_input);

/// Mean effective_rank(tau) of the head's matrix over the given sequences.
double mean_effective_rank(const Model& model, const Batch& batch, Index layer, Index head, double tau);

}  // namespace pattn

#endif  // PATTN_SPECTRUM_HPP
