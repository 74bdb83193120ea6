#include "pattn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <sstream>

#include "pattn/attention.hpp"
#include "pattn/csv.hpp"
#include "pattn/random.hpp"

namespace pattn {

void BenchConfig::validate() const {
  if (sizes.empty()) throw ConfigError("bench: sizes must not be empty");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1) throw ConfigError("bench: sizes must be positive");
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw ConfigError("bench: sizes must be ascending");
  }
  if (d < 1 || s < 1 || d_v < 1 || heads < 1) throw ConfigError("bench: dimensions must be positive");
  if (repeats < 1) throw ConfigError("bench: repeats must be positive");
}

namespace {

double median_seconds(Index repeats, const std::function<void()>& fn) {
  fn();
  std::vector<double> times;
  for (Index r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t mid = times.size() / 2;
  return times.size() % 2 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
}

}  // namespace

std::vector<BenchRow> run_bench(const BenchConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const auto fmap = FeatureMapSpec<double>::cosine(cfg.d);
  std::vector<HeadParams<double>> heads;
  std::vector<OutputMap<double>> maps;
  std::vector<ProjectionSet<double>> projections;
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  for (Index h = 0; h < cfg.heads; ++h) {
    HeadParams<double> hp;
    hp.projections = {random_uniform<double>(cfg.d, cfg.d, rng, bound), random_uniform<double>(cfg.d, cfg.d, rng, bound),
                      random_uniform<double>(cfg.d_v, cfg.d, rng, bound)};
    hp.w_e = random_uniform<double>(cfg.d, cfg.s, rng, bound);
    hp.w_r = random_uniform<double>(cfg.d, cfg.s, rng, bound);
    hp.lambda_raw = VectorX<double>::Zero(cfg.s);
    projections.push_back(hp.projections);
    heads.push_back(hp);
    maps.push_back({random_uniform<double>(cfg.d_v, 2 * cfg.s, rng, bound)});
  }

  std::vector<BenchRow> rows;
  for (Index n : cfg.sizes) {
    const MatrixX<double> x = random_normal<double>(n, cfg.d, rng);
    std::vector<Projected<double>> proj;
    for (const auto& ps : projections) proj.push_back(project(ps, x));

    BenchRow canon{"canonical", n, 0.0, 0, 0};
    FlopCounter cc;
    for (Index h = 0; h < cfg.heads; ++h) {
      const auto& p = proj[static_cast<std::size_t>(h)];
      canonical_core(p.q, p.k, p.v, false, &cc);
    }
    canon.flops = cc.attention;
    canon.buffer_bytes = cc.buffer_bytes;
    canon.median_seconds = median_seconds(cfg.repeats, [&] {
      for (const auto& p : proj) canonical_core(p.q, p.k, p.v);
    });

    BenchRow primal{"primal", n, 0.0, 0, 0};
    FlopCounter pc;
    for (Index h = 0; h < cfg.heads; ++h) {
      const auto& p = proj[static_cast<std::size_t>(h)];
      primal_scores(x, p.q, p.k, heads[static_cast<std::size_t>(h)], fmap, maps[static_cast<std::size_t>(h)], &pc);
    }
    primal.flops = pc.attention;
    primal.buffer_bytes = pc.buffer_bytes;
    primal.median_seconds = median_seconds(cfg.repeats, [&] {
      for (std::size_t h = 0; h < proj.size(); ++h) primal_scores(x, proj[h].q, proj[h].k, heads[h], fmap, maps[h]);
    });
    rows.push_back(canon);
    rows.push_back(primal);
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "mechanism,N,median_seconds,flops,buffer_bytes\n";
  for (const auto& r : rows)
    os << r.mechanism << ',' << r.n << ',' << format_double(r.median_seconds) << ',' << r.flops << ','
       << r.buffer_bytes << '\n';
  return os.str();
}

const BenchRow& find_row(const std::vector<BenchRow>& rows, const std::string& mechanism, Index n) {
  for (const auto& r : rows)
    if (r.mechanism == mechanism && r.n == n) return r;
  throw ConfigError("bench: no row for " + mechanism + " at N=" + std::to_string(n));
}

}  // namespace pattn
