#include "pattn/verify_grid.hpp"

#include <algorithm>

#include "pattn/random.hpp"

namespace pattn {

void VerifyGridConfig::validate() const {
  if (cases < 1) throw ConfigError("verify: cases must be positive");
  if (min_tokens < 1 || max_tokens < min_tokens) throw ConfigError("verify: need 1 <= min_tokens <= max_tokens");
  if (max_dim < 2) throw ConfigError("verify: max_dim must be at least 2");
  if (modes.empty() || feature_maps.empty()) throw ConfigError("verify: modes and feature_maps must not be empty");
  for (auto f : feature_maps)
    if (f == FeatureKind::RandomExponential)
      throw ConfigError("verify: the grid supports cosine and identity feature maps");
}

bool GridReport::passed() const {
  for (const auto& c : cases)
    if (!c.report.passed()) return false;
  return !cases.empty();
}

double GridReport::worst_ratio(const std::string& check) const {
  double worst = 0.0;
  for (const auto& c : cases)
    if (const auto* r = c.report.find(check)) {
      const double ratio = r->tolerance > 0.0 ? r->residual / r->tolerance : (r->residual > 0.0 ? HUGE_VAL : 0.0);
      worst = std::max(worst, ratio);
    }
  return worst;
}

double GridReport::worst_residual(const std::string& check) const {
  double worst = 0.0;
  for (const auto& c : cases)
    if (const auto* r = c.report.find(check)) worst = std::max(worst, r->residual);
  return worst;
}

GridReport run_verify_grid(const VerifyGridConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  GridReport out;
  const auto span = [&](Index lo, Index hi) { return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); };
  for (Index c = 0; c < cfg.cases; ++c) {
    GridCase gc;
    gc.index = c;
    const auto nm = static_cast<Index>(cfg.modes.size());
    gc.mode = cfg.modes[static_cast<std::size_t>(c % nm)];
    gc.feature_map = cfg.feature_maps[static_cast<std::size_t>((c / nm) % static_cast<Index>(cfg.feature_maps.size()))];
    gc.tokens = span(cfg.min_tokens, cfg.max_tokens);
    gc.dim = span(2, cfg.max_dim);
    gc.s = span(1, gc.tokens);

    HeadParams<double> h;
    h.projections.w_q = random_normal<double>(gc.dim, gc.dim, rng);
    h.projections.w_k = random_normal<double>(gc.dim, gc.dim, rng);
    h.mode = gc.mode;
    h.rank_multi = span(1, 3);
    h.subsample_seed = rng();
    const Index rows = gc.mode == ProjectionMode::DataIndependent ? gc.dim : std::max(gc.tokens, gc.s * h.rank_multi);
    h.w_e = random_normal<double>(rows, gc.s, rng);
    h.w_r = random_normal<double>(rows, gc.s, rng);
    h.lambda_raw = random_normal<double>(gc.s, 1, rng, 0.3);
    const MatrixX<double> x = random_normal<double>(gc.tokens, gc.dim, rng);
    const auto fmap = gc.feature_map == FeatureKind::Cosine ? FeatureMapSpec<double>::cosine(gc.dim)
                                                            : FeatureMapSpec<double>::identity(gc.dim);
    VerifyOptions opts;
    opts.corrupt = cfg.corrupt;
    gc.kernel_norm = build_kernel(x, h, fmap).norm();
    gc.report = verify_suite(x, h, fmap, gc.s, opts);
    out.cases.push_back(std::move(gc));
  }
  return out;
}

}  // namespace pattn
