// Acceptance checks: one PASS/FAIL line per criterion.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include <Eigen/Dense>

#include "pattn/bench.hpp"
#include "pattn/config.hpp"
#include "pattn/dual_oracle.hpp"
#include "pattn/spectrum.hpp"
#include "pattn/verify_grid.hpp"

using namespace pattn;
using Mat = MatrixX<double>;
using Vec = VectorX<double>;

namespace {

int failures = 0;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s [%d] %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Mat randn(Index r, Index c, Rng& rng) { return random_normal<double>(r, c, rng); }

// Independent construction of one stationary head: naive features, kernel by
// explicit sums, Eigen's SVD, and W_e = Phi_k^T H_r, W_r = Phi_q^T H_e,
// Lambda = Sigma^-1.
struct OracleCase {
  Mat x;
  HeadParams<double> head;
  FeatureMapSpec<double> fmap = FeatureMapSpec<double>::identity(1);
  Mat kernel;
  Mat h_e, h_r;
  Vec sigma;
};

Vec feature(FeatureKind kind, const Vec& v) {
  if (kind == FeatureKind::Identity) return v;
  double norm = 0.0;
  for (Index a = 0; a < v.size(); ++a) norm += v(a) * v(a);
  return v / std::sqrt(norm);
}

OracleCase oracle_case(Rng& rng, ProjectionMode mode, FeatureKind kind) {
  OracleCase c;
  const Index n = 3 + static_cast<Index>(rng.below(30));
  const Index d = 2 + static_cast<Index>(rng.below(7));
  c.x = randn(n, d, rng);
  c.fmap = kind == FeatureKind::Cosine ? FeatureMapSpec<double>::cosine(d) : FeatureMapSpec<double>::identity(d);
  auto& h = c.head;
  h.projections.w_q = randn(d, d, rng);
  h.projections.w_k = randn(d, d, rng);
  h.mode = mode;
  h.rank_multi = 1 + static_cast<Index>(rng.below(3));
  h.subsample_seed = rng();

  Mat phi_q(n, d), phi_k(n, d);
  for (Index i = 0; i < n; ++i) {
    Vec q = Vec::Zero(d), k = Vec::Zero(d);
    for (Index a = 0; a < d; ++a)
      for (Index b = 0; b < d; ++b) {
        q(a) += h.projections.w_q(a, b) * c.x(i, b);
        k(a) += h.projections.w_k(a, b) * c.x(i, b);
      }
    phi_q.row(i) = feature(kind, q).transpose();
    phi_k.row(i) = feature(kind, k).transpose();
  }
  Index s_req = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
  if (mode == ProjectionMode::DataDependent) {
    h.sample_rows = std::min(n, s_req * h.rank_multi);
    std::vector<Index> rows(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i;
    if (h.sample_rows < n) {
      Rng pick(h.subsample_seed);
      rows = sample_without_replacement(n, h.sample_rows, pick);
    }
    Mat lq(n, h.sample_rows), lk(n, h.sample_rows);
    for (Index i = 0; i < n; ++i)
      for (Index m = 0; m < h.sample_rows; ++m) {
        double a = 0.0, b = 0.0;
        for (Index t = 0; t < d; ++t) {
          a += phi_q(i, t) * c.x(rows[static_cast<std::size_t>(m)], t);
          b += phi_k(i, t) * c.x(rows[static_cast<std::size_t>(m)], t);
        }
        lq(i, m) = a;
        lk(i, m) = b;
      }
    phi_q = lq;
    phi_k = lk;
  }
  c.kernel = Mat::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      for (Index t = 0; t < phi_q.cols(); ++t) c.kernel(i, j) += phi_q(i, t) * phi_k(j, t);

  Eigen::JacobiSVD<Mat> svd(c.kernel, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec sv = svd.singularValues();
  Index keep = 0;
  while (keep < s_req && sv(keep) > 1e-10 * sv(0)) ++keep;
  c.sigma = sv.head(keep);
  c.h_e = svd.matrixU().leftCols(keep);
  c.h_r = svd.matrixV().leftCols(keep);
  h.w_e = phi_k.transpose() * c.h_r;
  h.w_r = phi_q.transpose() * c.h_e;
  h.lambda_raw = (-c.sigma.array().log()).matrix();
  return c;
}

void criteria_1_to_3() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(derive_seed(2024, 6));
  double worst_j = 0.0, worst_pd[2] = {0.0, 0.0};
  int cases = 0;
  for (int t = 0; t < 60; ++t)
    for (auto mode : {ProjectionMode::DataIndependent, ProjectionMode::DataDependent})
      for (auto kind : {FeatureKind::Cosine, FeatureKind::Identity}) {
        const OracleCase c = oracle_case(rng, mode, kind);
        const Index s = c.sigma.size();
        const auto out = primal_forward(c.x, c.head, c.fmap, OutputMap<double>{Mat::Zero(1, 2 * s)});
        double quad = 0.0;
        for (Index i = 0; i < c.x.rows(); ++i)
          for (Index l = 0; l < s; ++l)
            quad += 0.5 * (out.e_scores(i, l) * out.e_scores(i, l) + out.r_scores(i, l) * out.r_scores(i, l)) /
                    c.sigma(l);
        double coupling = 0.0;
        for (Index r = 0; r < c.head.w_e.rows(); ++r)
          for (Index l = 0; l < s; ++l) coupling += c.head.w_e(r, l) * c.head.w_r(r, l);
        const double j_naive = std::abs(quad - coupling);
        const double j_lib = std::abs(
            ksvd_objective(out.e_scores, out.r_scores, c.head.w_e, c.head.w_r, c.head.lambda()));
        worst_j = std::max(worst_j, std::max(j_naive, j_lib) / (1.0 + c.kernel.norm()));

        const Mat e_dual = c.kernel * c.h_r;
        const Mat r_dual = c.kernel.transpose() * c.h_e;
        const int m = mode == ProjectionMode::DataIndependent ? 0 : 1;
        worst_pd[m] = std::max({worst_pd[m], (out.e_scores - e_dual).cwiseAbs().maxCoeff(),
                                (out.r_scores - r_dual).cwiseAbs().maxCoeff()});
        ++cases;
      }

  const GridReport grid = run_verify_grid(VerifyGridConfig{}, derive_seed(0, 6));
  const double grid_ratio = grid.worst_ratio("zero_objective");
  const double elapsed = seconds_since(start);
  report(1, "zero objective at stationary solutions",
         worst_j <= 1e-8 && grid_ratio <= 1.0 && grid.cases.size() >= 200 && elapsed < 30.0,
         fmt("%.0f oracle cases, worst |J|/(1+||K||) %.2e; grid of %.0f cases worst ratio %.2e",
             cases, worst_j, static_cast<double>(grid.cases.size()), grid_ratio) +
             fmt(" (limit 1e-8, 30 s, took %.1f s)", elapsed));

  double worst_shift = 0.0, worst_recon = 0.0;
  for (const auto& gc : grid.cases) {
    worst_shift = std::max(worst_shift, gc.report.find("shifted_eigenproblem")->residual / gc.kernel_norm);
    worst_recon = std::max(worst_recon, gc.report.find("reconstruction")->residual / gc.kernel_norm);
  }
  Rng rng2(derive_seed(2025, 6));
  for (int t = 0; t < 200; ++t) {
    const Index n = 2 + static_cast<Index>(rng2.below(30));
    const Mat k = randn(n, n, rng2) * randn(n, n, rng2);
    const auto sol = ksvd_solve(k, 1 + static_cast<Index>(rng2.below(static_cast<std::uint64_t>(n))));
    const auto full = ksvd_solve(k, n);
    double res = 0.0;
    for (Index i = 0; i < n; ++i)
      for (Index l = 0; l < sol.directions(); ++l) {
        double right = -sol.h_e(i, l) * sol.sigma(l), left = -sol.h_r(i, l) * sol.sigma(l);
        for (Index j = 0; j < n; ++j) {
          right += k(i, j) * sol.h_r(j, l);
          left += k(j, i) * sol.h_e(j, l);
        }
        res += right * right + left * left;
      }
    worst_shift = std::max(worst_shift, std::sqrt(res) / k.norm());
    const Mat rebuilt = full.h_e * full.sigma.asDiagonal() * full.h_r.transpose();
    worst_recon = std::max(worst_recon, (k - rebuilt).norm() / k.norm());
  }
  report(2, "shifted eigenproblem and reconstruction residuals", worst_shift <= 1e-8 && worst_recon <= 1e-8,
         fmt("worst ||KH_r - H_e S|| / ||K|| %.2e, worst reconstruction / ||K|| %.2e (limit 1e-8)", worst_shift,
             worst_recon));

  const double grid_pd = std::max(grid.worst_residual("primal_dual_e"), grid.worst_residual("primal_dual_r"));
  report(3, "primal and dual scores agree in both modes",
         worst_pd[0] <= 1e-8 && worst_pd[1] <= 1e-8 && grid_pd <= 1e-8,
         fmt("data-independent %.2e, data-dependent %.2e, grid %.2e (limit 1e-8)", worst_pd[0], worst_pd[1],
             grid_pd));
}

void criterion_4() {
  Rng rng(derive_seed(2026, 6));
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const Index n = 1 + static_cast<Index>(rng.below(16));
    const Index d = 2 + static_cast<Index>(rng.below(6));
    const Index dv = 1 + static_cast<Index>(rng.below(5));
    const ProjectionSet<double> ps{randn(d, d, rng), randn(d, d, rng), randn(dv, d, rng)};
    const Mat x = randn(n, d, rng);
    const Mat q = x * ps.w_q.transpose(), k = x * ps.w_k.transpose(), v = x * ps.w_v.transpose();
    Mat kernel(n, n);
    for (Index i = 0; i < n; ++i) {
      double peak = -HUGE_VAL;
      for (Index j = 0; j < n; ++j) peak = std::max(peak, q.row(i).dot(k.row(j)) / std::sqrt(double(d)));
      double total = 0.0;
      for (Index j = 0; j < n; ++j) total += kernel(i, j) = std::exp(q.row(i).dot(k.row(j)) / std::sqrt(double(d)) - peak);
      kernel.row(i) /= total;
    }
    KsvdSolution<double> values;
    values.h_r = v;
    values.h_e = Mat::Zero(n, dv);
    values.sigma = Vec::Ones(dv);
    worst = std::max(worst, (dual_scores(kernel, values).first - canonical_forward(x, ps)).cwiseAbs().maxCoeff());
  }
  report(4, "canonical attention is the dual e-score with values as H_r", worst <= 1e-12,
         fmt("200 cases with N <= 16, worst deviation %.2e (limit 1e-12)", worst));
}

void criterion_5() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  int configs = 0;
  bool all_pass = true;
  ModelConfig base;
  base.d_model = 8;
  base.head_dim = 8;
  base.s = 4;
  base.d_v = 8;
  base.rank_multi = 2;
  base.vocab = 6;
  base.seq_len = 8;
  base.outputs = 3;
  base.eta = 0.5;
  std::vector<ModelConfig> cfgs;
  for (auto mode : {ProjectionMode::DataIndependent, ProjectionMode::DataDependent})
    for (auto fmap : {FeatureKind::Cosine, FeatureKind::Identity, FeatureKind::RandomExponential})
      for (bool causal : {false, true}) {
        ModelConfig c = base;
        c.mode = mode;
        c.fmap = fmap;
        c.causal = causal;
        cfgs.push_back(c);
      }
  for (bool causal : {false, true}) {
    ModelConfig c = base;
    c.kinds = {AttentionKind::Canonical};
    c.causal = causal;
    cfgs.push_back(c);
  }
  ModelConfig deep = base;
  deep.layers = 2;
  deep.heads = 2;
  deep.kinds = {AttentionKind::Primal, AttentionKind::Canonical};
  cfgs.push_back(deep);

  Rng rng(derive_seed(2027, 6));
  for (const auto& c : cfgs) {
    const Model m = Model::init(c, {rng(), rng(), rng()});
    Batch batch;
    for (int b = 0; b < 3; ++b) {
      std::vector<Index> seq(8);
      for (auto& t : seq) t = static_cast<Index>(rng.below(6));
      batch.tokens.push_back(seq);
      batch.labels.push_back(static_cast<Index>(rng.below(3)));
    }
    const auto rep = gradcheck(loss_builder(m, batch), m.params, GradCheckOptions{});
    worst = std::max(worst, rep.max_rel_error());
    for (const auto& t : rep.tensors) {
      const Index eligible = m.params.at(t.name).size() - t.skipped;
      all_pass = all_pass && t.pass && t.checked >= std::min<Index>(64, eligible);
    }
    ++configs;
  }
  const double elapsed = seconds_since(start);
  report(5, "model gradients match central differences", all_pass && worst <= 1e-4 && elapsed < 120.0,
         fmt("%.0f configurations (Primal x 2 modes x 3 maps x causal, canonical, mixed), worst rel error %.2e "
             "(limit 1e-4), %.1f s (limit 120 s)",
             configs, worst, elapsed));
}

void criterion_6() {
  BenchConfig cfg;
  const auto rows = run_bench(cfg);
  const auto& c0 = find_row(rows, "canonical", 1024);
  const auto& c1 = find_row(rows, "canonical", 2048);
  const auto& p0 = find_row(rows, "primal", 1024);
  const auto& p1 = find_row(rows, "primal", 2048);
  const bool flops_ok = c1.flops == 4 * c0.flops && p1.flops == 2 * p0.flops;
  const double tc = c1.median_seconds / c0.median_seconds;
  const double tp = p1.median_seconds / p0.median_seconds;
  report(6, "attention cost scaling N=1024 -> 2048",
         flops_ok && tc >= 3.2 && tc <= 5.2 && tp >= 1.6 && tp <= 2.6,
         fmt("FLOP ratios canonical %.0f primal %.0f (exact 4, 2); time ratios canonical %.2f [3.2, 5.2] primal "
             "%.2f [1.6, 2.6]",
             static_cast<double>(c1.flops) / static_cast<double>(c0.flops),
             static_cast<double>(p1.flops) / static_cast<double>(p0.flops), tc, tp));
}

struct RunResult {
  TrainLog log;
  Model model;
};

RunResult run_task(const RunConfig& cfg, const Dataset& data) {
  TrainState st{Model::init(cfg.resolved_model(), cfg.model_seeds()), {}, 0};
  auto log = train(st, data, cfg.optimizer, cfg.resolved_train());
  return {std::move(log), std::move(st.model)};
}

void criterion_7() {
  const auto start = std::chrono::steady_clock::now();
  RunConfig cfg;
  cfg.model.layers = 1;
  cfg.train.steps = 2000;
  cfg.train.log_every = 100;
  const Dataset data = make_task(cfg.resolved_task());
  const auto a = run_task(cfg, data);
  const auto b = run_task(cfg, data);
  double best = 0.0;
  Index first_step = -1;
  for (const auto& row : a.log.rows) {
    best = std::max(best, row.eval_metric);
    if (first_step < 0 && row.eval_metric >= 0.95) first_step = row.step;
  }
  const double final_acc = a.log.rows.back().eval_metric;
  const double elapsed = seconds_since(start);
  const bool same = a.log.csv() == b.log.csv();
  report(7, "MajorityToken (2 classes, N=16, 1 Primal layer)",
         final_acc >= 0.95 && same && elapsed < 300.0,
         fmt("final test accuracy %.4f after 2000 steps (first >= 0.95 at step %.0f), identical rerun %.0f, %.1f s "
             "for two runs (limit 300 s)",
             final_acc, static_cast<double>(first_step), same ? 1.0 : 0.0, elapsed));
}

void criterion_8() {
  const auto start = std::chrono::steady_clock::now();
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    double rank[2];
    for (int k = 0; k < 2; ++k) {
      RunConfig cfg;
      cfg.seed = seed;
      cfg.model.layers = 2;
      cfg.model.eta = k ? 0.1 : 0.0;
      const Dataset data = make_task(cfg.resolved_task());
      const auto run = run_task(cfg, data);
      rank[k] = mean_effective_rank(run.model, data.batch(data.test), 1, 0, 0.9);
    }
    wins += rank[1] <= rank[0];
    detail += fmt(" %.2f/%.2f", rank[1], rank[0]);
  }
  const double elapsed = seconds_since(start);
  report(8, "KSVD penalty lowers last-layer effective rank", wins >= 7 && elapsed < 1800.0,
         fmt("eta=0.1 <= eta=0 in %.0f/10 seeds (need 7), %.0f s; mean effective_rank(0.9) eta=0.1/eta=0:", wins,
             elapsed) +
             detail);
}

void criterion_9() {
  Rng rng(derive_seed(2028, 6));
  double worst_gap = HUGE_VAL;
  for (int t = 0; t < 10; ++t) {
    const Index n = 2 + static_cast<Index>(rng.below(5));
    const Index s = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    const Mat k = randn(n, n, rng);
    const auto sol = ksvd_solve(k, s);
    const double value = (sol.h_e.transpose() * k * sol.h_r).trace();
    double best = -HUGE_VAL;
    for (int c = 0; c < 10000; ++c) {
      Eigen::HouseholderQR<Mat> qe(randn(n, s, rng)), qr(randn(n, s, rng));
      const Mat he = qe.householderQ() * Mat::Identity(n, s);
      const Mat hr = qr.householderQ() * Mat::Identity(n, s);
      best = std::max(best, (he.transpose() * k * hr).trace());
    }
    worst_gap = std::min(worst_gap, value - best);
  }
  report(9, "SVD maximizes Tr(H_e^T K H_r) over orthonormal candidates", worst_gap >= -1e-9,
         fmt("10 kernels with N <= 6, 10000 candidates each, smallest margin %.3e (need >= -1e-9)", worst_gap));
}

}  // namespace

int main(int argc, char** argv) {
  const std::string only = argc > 1 ? argv[1] : "";
  const std::vector<std::pair<std::string, std::function<void()>>> steps = {
      {"1", criteria_1_to_3}, {"4", criterion_4}, {"5", criterion_5}, {"6", criterion_6},
      {"7", criterion_7},     {"8", criterion_8}, {"9", criterion_9}};
  for (const auto& [id, fn] : steps) {
    if (!only.empty() && only != id) continue;
    try {
      fn();
    } catch (const std::exception& e) {
      report(std::stoi(id), "exception", false, e.what());
    }
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
