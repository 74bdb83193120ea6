// pattn: verify | train | spectrum | bench --config <path> --out <dir> [--seed <u64>]

#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pattn/config.hpp"
#include "pattn/csv.hpp"
#include "pattn/random.hpp"
#include "pattn/spectrum.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pattn;

namespace {

constexpr int kPass = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void write_json(const fs::path& path, const json& doc) { write_file_atomic(path, doc.dump(2) + "\n"); }

RunConfig prepare(const Options& opts) {
  RunConfig cfg = load_run_config(opts.config);
  if (opts.seed) cfg.seed = *opts.seed;
  fs::create_directories(opts.out);
  write_json(fs::path(opts.out) / "config.json", to_json(cfg));
  return cfg;
}

json check_json(const CheckResult& c) {
  return {{"name", c.name}, {"residual", c.residual}, {"tolerance", c.tolerance}, {"pass", c.pass}};
}

int cmd_verify(const Options& opts) {
  const RunConfig cfg = prepare(opts);
  const GridReport grid = run_verify_grid(cfg.verify, cfg.verify_seed());
  json cases = json::array();
  json failures = json::array();
  for (const auto& c : grid.cases) {
    json checks = json::array();
    for (const auto& r : c.report.checks) {
      checks.push_back(check_json(r));
      if (!r.pass) failures.push_back({{"case", c.index}, {"check", r.name}});
    }
    cases.push_back({{"index", c.index},
                     {"mode", to_string(c.mode)},
                     {"feature_map", to_string(c.feature_map)},
                     {"tokens", c.tokens},
                     {"dim", c.dim},
                     {"s", c.s},
                     {"used_directions", c.report.used_directions},
                     {"truncated", c.report.truncated},
                     {"kernel_norm", c.kernel_norm},
                     {"checks", checks}});
  }
  const bool passed = grid.passed();
  write_json(fs::path(opts.out) / "verify_report.json",
             {{"schema", 1}, {"passed", passed}, {"corrupt", cfg.verify.corrupt}, {"failures", failures}, {"cases", cases}});
  std::cout << "verify: " << grid.cases.size() << " cases, " << failures.size() << " failed checks\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(failures.size(), 10); ++i)
    std::cerr << "  case " << failures[i]["case"] << ": " << failures[i]["check"].get<std::string>() << " failed\n";
  return passed ? kPass : kFailed;
}

std::string eta_label(double eta) {
  std::ostringstream os;
  os << "eta_" << eta;
  return os.str();
}

int cmd_train(const Options& opts) {
  const RunConfig cfg = prepare(opts);
  const Dataset data = make_task(cfg.resolved_task());
  std::vector<double> etas = cfg.eta_sweep;
  const bool sweep = !etas.empty();
  if (!sweep) etas.push_back(cfg.model.eta);
  json runs = json::array();
  int status = kPass;
  for (double eta : etas) {
    const fs::path dir = sweep ? fs::path(opts.out) / eta_label(eta) : fs::path(opts.out);
    fs::create_directories(dir);
    ModelConfig mc = cfg.resolved_model();
    mc.eta = eta;
    TrainState state{Model::init(mc, cfg.model_seeds()), {}, 0};
    if (!cfg.resume_from.empty()) load_checkpoint(cfg.resume_from, state);
    TrainLog log;
    bool diverged = false;
    std::string message;
    try {
      log = train(state, data, cfg.optimizer, cfg.resolved_train());
    } catch (const TrainingDiverged& e) {
      log = e.log();
      diverged = true;
      message = e.what();
    }
    write_file_atomic(dir / "train_log.csv", log.csv());
    json run = {{"eta", eta}, {"dir", dir.string()}, {"diverged", diverged}, {"steps", state.step}};
    if (diverged) {
      std::cerr << message << "\n";
      run["message"] = message;
      status = kFailed;
    } else {
      save_checkpoint(dir / "checkpoint", state);
      run["final_eval_metric"] = log.rows.back().eval_metric;
      run["final_total_loss"] = log.rows.back().total;
      std::cout << "train " << eta_label(eta) << ": step " << state.step << ", eval " << log.rows.back().eval_metric
                << "\n";
    }
    runs.push_back(run);
  }
  write_json(fs::path(opts.out) / "train_report.json", {{"schema", 1}, {"runs", runs}});
  return status;
}

std::string tau_key(double tau) {
  std::ostringstream os;
  os << tau;
  return os.str();
}

json spectrum_json(const SpectrumReport& rep) {
  json ranks = json::object();
  for (double tau : kRankThresholds) ranks[tau_key(tau)] = rep.effective_rank(tau);
  return {{"singular_values", std::vector<double>(rep.singular_values.begin(), rep.singular_values.end())},
          {"explained_variance", std::vector<double>(rep.explained_variance.begin(), rep.explained_variance.end())},
          {"explained_sigma", std::vector<double>(rep.explained_sigma.begin(), rep.explained_sigma.end())},
          {"effective_rank", ranks}};
}

int cmd_spectrum(const Options& opts) {
  const RunConfig cfg = prepare(opts);
  const fs::path out(opts.out);
  if (cfg.spectrum.source == "file") {
    const auto rep = spectrum(load_matrix_csv(cfg.spectrum.matrix));
    write_file_atomic(out / "spectrum.csv", rep.csv());
    write_json(out / "spectrum.json", {{"schema", 1}, {"source", "file"}, {"report", spectrum_json(rep)}});
    return kPass;
  }
  if (cfg.spectrum.checkpoint.empty()) throw ConfigError("spectrum: checkpoint is required for source 'model'");
  TrainState state{Model::init(cfg.resolved_model(), cfg.model_seeds()), {}, 0};
  load_checkpoint(cfg.spectrum.checkpoint, state);
  const Model& model = state.model;
  const Index layer = cfg.spectrum.layer < 0 ? model.config.layers - 1 : cfg.spectrum.layer;
  if (layer >= model.config.layers || cfg.spectrum.head < 0 || cfg.spectrum.head >= model.config.heads)
    throw ConfigError("spectrum: layer or head out of range");

  const Dataset data = make_task(cfg.resolved_task());
  Rng rng(cfg.spectrum.batch_seed);
  std::vector<Index> rows;
  for (Index i = 0; i < cfg.spectrum.batch_size; ++i)
    rows.push_back(data.test[static_cast<std::size_t>(rng.below(data.test.size()))]);
  ad::Tape tape;
  const auto res = forward_loss(model, data.batch(rows), tape);
  json per_sequence = json::array();
  json mean_ranks = json::object();
  std::vector<double> sums(kRankThresholds.size(), 0.0);
  const auto& inputs = res.layer_inputs[static_cast<std::size_t>(layer)];
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    const auto rep = spectrum(attention_matrix(model, layer, cfg.spectrum.head, inputs[b]));
    if (b == 0) write_file_atomic(out / "spectrum.csv", rep.csv());
    write_file_atomic(out / ("spectrum_seq" + std::to_string(b) + ".csv"), rep.csv());
    for (std::size_t t = 0; t < kRankThresholds.size(); ++t)
      sums[t] += static_cast<double>(rep.effective_rank(kRankThresholds[t]));
    per_sequence.push_back(spectrum_json(rep));
  }
  for (std::size_t t = 0; t < kRankThresholds.size(); ++t)
    mean_ranks[tau_key(kRankThresholds[t])] = sums[t] / static_cast<double>(inputs.size());
  write_json(out / "spectrum.json", {{"schema", 1},
                                     {"source", "model"},
                                     {"layer", layer},
                                     {"head", cfg.spectrum.head},
                                     {"attention", to_string(model.config.kind(layer))},
                                     {"mean_effective_rank", mean_ranks},
                                     {"sequences", per_sequence}});
  return kPass;
}

int cmd_bench(const Options& opts) {
  const RunConfig cfg = prepare(opts);
  const auto rows = run_bench(cfg.resolved_bench());
  write_file_atomic(fs::path(opts.out) / "bench.csv", bench_csv(rows));
  json ratios = json::array();
  const auto& sizes = cfg.bench.sizes;
  for (std::size_t i = 1; i < sizes.size(); ++i)
    for (const char* mech : {"canonical", "primal"}) {
      const auto& a = find_row(rows, mech, sizes[i - 1]);
      const auto& b = find_row(rows, mech, sizes[i]);
      ratios.push_back({{"mechanism", mech},
                        {"from", sizes[i - 1]},
                        {"to", sizes[i]},
                        {"flop_ratio", static_cast<double>(b.flops) / static_cast<double>(a.flops)},
                        {"time_ratio", b.median_seconds / a.median_seconds}});
    }
  write_json(fs::path(opts.out) / "bench.json", {{"schema", 1}, {"ratios", ratios}});
  std::cout << bench_csv(rows);
  return kPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Primal-Attention toolkit"};
  app.require_subcommand(1);
  Options opts;
  std::uint64_t seed = 0;
  std::vector<std::pair<CLI::App*, int (*)(const Options&)>> commands;
  const std::pair<const char*, const char*> names[] = {
      {"verify", "Run the dual-oracle verification grid"},
      {"train", "Train a model on a synthetic task"},
      {"spectrum", "Singular value spectrum of a matrix or a trained attention head"},
      {"bench", "Time and count attention cores"}};
  int (*handlers[])(const Options&) = {cmd_verify, cmd_train, cmd_spectrum, cmd_bench};
  std::vector<CLI::Option*> seed_opts;
  for (std::size_t i = 0; i < 4; ++i) {
    CLI::App* sub = app.add_subcommand(names[i].first, names[i].second);
    sub->add_option("--config", opts.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "Output directory")->required();
    seed_opts.push_back(sub->add_option("--seed", seed, "Override the run seed"));
    commands.emplace_back(sub, handlers[i]);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kUsage;
  }
  for (auto* o : seed_opts)
    if (o->count()) opts.seed = seed;
  try {
    for (const auto& [sub, handler] : commands)
      if (sub->parsed()) return handler(opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}
