#include "pattn/ksvd_objective.hpp"

#include <numeric>

namespace pattn {

KsvdLossReport summarize_ksvd(const std::vector<std::vector<double>>& per_head_j, double eta) {
  if (eta < 0.0) throw ConfigError("eta must be nonnegative");
  KsvdLossReport report;
  report.per_head_j = per_head_j;
  report.eta = eta;
  for (const auto& heads : per_head_j) {
    if (heads.empty()) throw ShapeError("summarize_ksvd: layer without heads");
    report.per_layer_j.push_back(std::accumulate(heads.begin(), heads.end(), 0.0) /
                                 static_cast<double>(heads.size()));
  }
  double sq = 0.0;
  for (double j : report.per_layer_j) sq += j * j;
  report.penalty = eta * sq;
  return report;
}

double total_loss(double task_loss, const std::vector<double>& per_layer_j, double eta) {
  if (eta < 0.0) throw ConfigError("eta must be nonnegative");
  double sq = 0.0;
  for (double j : per_layer_j) sq += j * j;
  return task_loss + eta * sq;
}

}  // namespace pattn
