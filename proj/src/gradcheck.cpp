#include "pattn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pattn/random.hpp"

namespace pattn {

double relative_error(double analytic, double numeric, double floor) {
  if (analytic == numeric) return 0.0;
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport gradcheck(const LossBuilder& build, const ParamMap& params, const GradCheckOptions& opts) {
  ad::Tape tape;
  LeafMap leaves;
  for (const auto& [name, value] : params) leaves.emplace(name, tape.leaf(value));
  const ad::Var loss = build(tape, leaves);
  GradCheckReport report;
  report.loss = loss.value()(0, 0);
  tape.backward(loss);
  const auto base_signature = tape.signature();
  Rng rng(opts.seed);

  auto evaluate = [&](ad::Var leaf, const ad::Mat& value, bool& kink) {
    tape.set_value(leaf, value);
    tape.replay();
    kink = kink || tape.signature() != base_signature;
    return tape.value(loss)(0, 0);
  };

  for (const auto& [name, leaf] : leaves) {
    const ad::Mat base = params.at(name);
    const ad::Mat grad = tape.grad(leaf);
    TensorCheck check;
    check.name = name;
    check.max_abs_grad = grad.cwiseAbs().maxCoeff();
    const ad::Index total = base.size();
    // Visit coordinates in a random order until enough smooth ones are checked.
    std::vector<ad::Index> order(static_cast<std::size_t>(total));
    std::iota(order.begin(), order.end(), ad::Index{0});
    for (ad::Index i = total - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.below(std::uint64_t(i) + 1))]);
    const ad::Index wanted = std::min(opts.coords_per_tensor, total);
    for (ad::Index c : order) {
      if (check.checked >= wanted) break;
      ad::Mat probe = base;
      bool kink = false;
      probe(c) = base(c) + opts.step;
      const double plus = evaluate(leaf, probe, kink);
      probe(c) = base(c) - opts.step;
      const double minus = evaluate(leaf, probe, kink);
      if (kink) {
        ++check.skipped;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * opts.step);
      check.max_rel_error = std::max(check.max_rel_error, relative_error(grad(c), numeric, opts.floor));
      ++check.checked;
    }
    tape.set_value(leaf, base);
    tape.replay();
    check.pass = check.checked >= std::min(wanted, total - check.skipped) && check.checked > 0 &&
                 check.max_rel_error <= opts.tolerance;
    report.tensors.push_back(check);
  }
  return report;
}

}  // namespace pattn
