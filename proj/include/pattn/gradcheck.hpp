#ifndef PATTN_GRADCHECK_HPP
#define PATTN_GRADCHECK_HPP

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pattn/autodiff.hpp"

namespace pattn {

using ParamMap = std::map<std::string, ad::Mat>;
using LeafMap = std::map<std::string, ad::Var>;
/// Records a scalar loss on `tape` from the given parameter leaves.
using LossBuilder = std::function<ad::Var(ad::Tape&, const LeafMap&)>;

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-8;
  ad::Index coords_per_tensor = 64;
  std::uint64_t seed = 0;
};

struct TensorCheck {
  std::string name;
  ad::Index checked = 0;
  /// Coordinates dropped because a perturbation crossed a ReLU or clamp boundary.
  ad::Index skipped = 0;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double loss = 0.0;

  bool passed() const {
    for (const auto& t : tensors)
      if (!t.pass) return false;
    return !tensors.empty();
  }
  double max_rel_error() const {
    double m = 0.0;
    for (const auto& t : tensors) m = std::max(m, t.max_rel_error);
    return m;
  }
};

double relative_error(double analytic, double numeric, double floor);

/// Central finite differences against reverse-mode gradients on
/// `coords_per_tensor` random coordinates of every tensor (all of them for
/// smaller tensors).
GradCheckReport gradcheck(const LossBuilder& build, const ParamMap& params, const GradCheckOptions& opts = {});

}  // namespace pattn

#endif  // PATTN_GRADCHECK_HPP
