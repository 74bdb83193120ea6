#ifndef PATTN_VERIFY_GRID_HPP
#define PATTN_VERIFY_GRID_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "pattn/dual_oracle.hpp"

namespace pattn {

struct VerifyGridConfig {
  Index cases = 200;
  Index min_tokens = 3;
  Index max_tokens = 32;
  /// Input widths are drawn from [2, max_dim].
  Index max_dim = 8;
  std::vector<ProjectionMode> modes = {ProjectionMode::DataIndependent, ProjectionMode::DataDependent};
  std::vector<FeatureKind> feature_maps = {FeatureKind::Cosine, FeatureKind::Identity};
  /// Flip the sign of one singular vector in every case.
  bool corrupt = false;

  void validate() const;
};

struct GridCase {
  Index index = 0;
  ProjectionMode mode = ProjectionMode::DataIndependent;
  FeatureKind feature_map = FeatureKind::Cosine;
  Index tokens = 0;
  Index dim = 0;
  Index s = 0;
  double kernel_norm = 0.0;
  VerificationReport report;
};

struct GridReport {
  std::vector<GridCase> cases;

  bool passed() const;
  /// Largest residual / tolerance ratio of a named check over all cases.
  double worst_ratio(const std::string& check) const;
  double worst_residual(const std::string& check) const;
};

/// Random cases cycling through every (mode, feature map) pair; N, d, s and
/// weights are drawn from `seed`.
GridReport run_verify_grid(const VerifyGridConfig& cfg, std::uint64_t seed);

}  // namespace pattn

#endif  // PATTN_VERIFY_GRID_HPP
