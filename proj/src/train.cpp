#include "pattn/train.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pattn/csv.hpp"

namespace pattn {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + name + "'");
}

void OptimizerConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("optimizer: lr must be a nonnegative number");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("optimizer: betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight_decay must be nonnegative");
  if (!(lambda_lr_scale >= 0.0)) throw ConfigError("optimizer: lambda_lr_scale must be nonnegative");
}

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train: steps must be nonnegative");
  if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
  if (log_every < 1) throw ConfigError("train: log_every must be positive");
}

namespace {

bool is_lambda(const std::string& name) {
  const std::string suffix = "lambda_raw";
  return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void optimizer_step(ParamMap& params, const ParamMap& grads, OptimizerState& state, const OptimizerConfig& cfg) {
  ++state.t;
  const double t = static_cast<double>(state.t);
  for (auto& [name, p] : params) {
    const bool lam = is_lambda(name);
    ad::Mat g = grads.at(name);
    if (cfg.weight_decay > 0.0 && (!lam || cfg.lambda_weight_decay)) g += cfg.weight_decay * p;
    const double lr = cfg.lr * (lam ? cfg.lambda_lr_scale : 1.0);
    if (cfg.kind == OptimizerKind::Sgd) {
      p -= lr * g;
      continue;
    }
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() == 0) m = ad::Mat::Zero(p.rows(), p.cols());
    if (v.size() == 0) v = ad::Mat::Zero(p.rows(), p.cols());
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
  }
}

std::string TrainLog::csv() const {
  std::ostringstream os;
  os << "step,task_loss";
  for (Index l : primal_layers) os << ",j_l" << l;
  os << ",penalty,total,eval_metric\n";
  for (const auto& r : rows) {
    os << r.step << ',' << format_double(r.task_loss);
    for (double j : r.layer_j) os << ',' << format_double(j);
    os << ',' << format_double(r.penalty) << ',' << format_double(r.total) << ',' << format_double(r.eval_metric)
       << '\n';
  }
  return os.str();
}

double evaluate(const Model& model, const Dataset& data, const std::vector<Index>& rows, Index chunk) {
  if (rows.empty()) throw ShapeError("evaluate: no rows");
  double correct = 0.0, sq = 0.0, count = 0.0;
  for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t stop = std::min(rows.size(), start + static_cast<std::size_t>(chunk));
    const std::vector<Index> part(rows.begin() + static_cast<std::ptrdiff_t>(start),
                                  rows.begin() + static_cast<std::ptrdiff_t>(stop));
    const Batch batch = data.batch(part);
    ad::Tape tape;
    const auto res = forward_loss(model, batch, tape);
    if (data.spec.is_classification()) {
      for (Index i = 0; i < res.outputs.rows(); ++i) {
        Index arg = 0;
        res.outputs.row(i).maxCoeff(&arg);
        correct += arg == batch.labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
      }
      count += static_cast<double>(res.outputs.rows());
    } else {
      sq += res.task_value * static_cast<double>(res.outputs.size());
      count += static_cast<double>(res.outputs.size());
    }
  }
  return data.spec.is_classification() ? correct / count : sq / count;
}

ParamMap gradients(const Model& model, const Batch& batch, ForwardResult* result) {
  ad::Tape tape;
  const LeafMap leaves = attach(tape, model.params, true);
  ForwardResult res = forward_loss(model, batch, tape, leaves);
  tape.backward(res.loss);
  ParamMap grads;
  for (const auto& [name, leaf] : leaves) grads.emplace(name, tape.grad(leaf));
  if (result) *result = std::move(res);
  return grads;
}

namespace {

TrainRow make_row(Index step, const ForwardResult& res, double eval_metric) {
  TrainRow row;
  row.step = step;
  row.task_loss = res.task_value;
  row.layer_j = res.report.per_layer_j;
  row.penalty = res.report.penalty;
  row.total = res.loss_value;
  row.eval_metric = eval_metric;
  return row;
}

}  // namespace

TrainLog train(TrainState& state, const Dataset& data, const OptimizerConfig& opt, const TrainConfig& cfg) {
  opt.validate();
  cfg.validate();
  TrainLog log;
  for (Index l = 0; l < state.model.config.layers; ++l)
    if (state.model.config.kind(l) == AttentionKind::Primal) log.primal_layers.push_back(l);

  auto diverged = [&](Index step, const std::string& why) {
    return TrainingDiverged("training diverged at step " + std::to_string(step) + ": " + why, log);
  };
  auto check = [&](Index step, const ForwardResult& res) {
    if (!std::isfinite(res.loss_value) || res.loss_value > cfg.divergence_threshold)
      throw diverged(step, "loss " + format_double(res.loss_value));
  };

  for (Index step = state.step; step < cfg.steps; ++step) {
    const Batch batch = data.batch(batch_rows(data, cfg.batch_seed, step, cfg.batch_size));
    ForwardResult res;
    ParamMap grads;
    try {
      grads = gradients(state.model, batch, &res);
    } catch (const NumericError& e) {
      throw diverged(step, e.what());
    }
    check(step, res);
    if (step % cfg.log_every == 0) log.rows.push_back(make_row(step, res, evaluate(state.model, data, data.test)));
    optimizer_step(state.model.params, grads, state.optimizer, opt);
    state.step = step + 1;
  }

  if (log.rows.empty() || log.rows.back().step != state.step) {
    const Batch batch = data.batch(batch_rows(data, cfg.batch_seed, state.step, cfg.batch_size));
    ad::Tape tape;
    ForwardResult res;
    try {
      res = forward_loss(state.model, batch, tape);
    } catch (const NumericError& e) {
      throw diverged(state.step, e.what());
    }
    check(state.step, res);
    log.rows.push_back(make_row(state.step, res, evaluate(state.model, data, data.test)));
  }
  return log;
}

namespace {

using nlohmann::json;

std::string tensor_file(const std::string& group, const std::string& name) { return group + "." + name + ".csv"; }

void put(json& tensors, const std::filesystem::path& dir, const std::string& group, const ParamMap& map) {
  for (const auto& [name, value] : map) {
    const std::string file = tensor_file(group, name);
    save_matrix_csv(dir / file, value);
    tensors[group + "/" + name] = {{"shape", {value.rows(), value.cols()}}, {"file", file}};
  }
}

ad::Mat fetch(const json& tensors, const std::filesystem::path& dir, const std::string& key) {
  if (!tensors.contains(key)) throw IoError("checkpoint: missing tensor " + key);
  const json& entry = tensors.at(key);
  ad::Mat m = load_matrix_csv(dir / entry.at("file").get<std::string>());
  const auto rows = entry.at("shape").at(0).get<Index>();
  const auto cols = entry.at("shape").at(1).get<Index>();
  if (m.rows() != rows || m.cols() != cols) throw IoError("checkpoint: shape mismatch for " + key);
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state) {
  json manifest;
  manifest["schema"] = 1;
  manifest["step"] = state.step;
  manifest["optimizer_t"] = state.optimizer.t;
  json tensors = json::object();
  put(tensors, dir, "param", state.model.params);
  put(tensors, dir, "adam_m", state.optimizer.m);
  put(tensors, dir, "adam_v", state.optimizer.v);
  manifest["tensors"] = tensors;
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

void load_checkpoint(const std::filesystem::path& dir, TrainState& state) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("checkpoint: cannot open " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(in);
    if (manifest.at("schema").get<int>() != 1) throw IoError("checkpoint: unsupported schema");
    const json& tensors = manifest.at("tensors");
    ParamMap params;
    for (const auto& [name, value] : state.model.params) {
      params[name] = fetch(tensors, dir, "param/" + name);
      if (params[name].rows() != value.rows() || params[name].cols() != value.cols())
        throw IoError("checkpoint: tensor " + name + " does not match the model configuration");
    }
    OptimizerState opt;
    opt.t = manifest.at("optimizer_t").get<std::int64_t>();
    for (const auto& [key, entry] : tensors.items()) {
      (void)entry;
      if (key.rfind("adam_m/", 0) == 0) opt.m[key.substr(7)] = fetch(tensors, dir, key);
      if (key.rfind("adam_v/", 0) == 0) opt.v[key.substr(7)] = fetch(tensors, dir, key);
    }
    state.model.params = std::move(params);
    state.optimizer = std::move(opt);
    state.step = manifest.at("step").get<Index>();
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
}

}  // namespace pattn
