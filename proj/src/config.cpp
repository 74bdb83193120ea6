#include "pattn/config.hpp"

#include <fstream>
#include <set>

#include "pattn/random.hpp"

namespace pattn {

using nlohmann::json;

namespace {

enum SeedTag : std::uint64_t { kTask = 1, kInit, kFeatures, kSubsample, kBatches, kVerify, kBench };

std::string to_string_mode(ProjectionMode m) { return to_string(m); }

// Reads keys of one JSON object into existing defaults and rejects keys it
// was never asked about.
class Section {
 public:
  Section(const json& doc, std::string path) : path_(std::move(path)) {
    if (doc.is_null()) return;
    if (!doc.is_object()) throw ConfigError(path_ + ": expected an object");
    doc_ = &doc;
  }
  ~Section() noexcept(false) {
    if (!doc_ || std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : doc_->items()) {
      (void)value;
      if (!seen_.count(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
    }
  }

  const json* get(const std::string& key) {
    seen_.insert(key);
    if (!doc_ || !doc_->contains(key)) return nullptr;
    return &doc_->at(key);
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (const json* v = get(key)) {
      try {
        if constexpr (std::is_same_v<T, Index> || std::is_same_v<T, std::uint64_t>) {
          if (!v->is_number_integer()) throw ConfigError(path_ + "." + key + ": expected an integer");
        }
        if constexpr (std::is_same_v<T, double>) {
          if (!v->is_number()) throw ConfigError(path_ + "." + key + ": expected a number");
        }
        if constexpr (std::is_same_v<T, std::uint64_t>) {
          if (v->is_number_integer() && !v->is_number_unsigned() && v->get<std::int64_t>() < 0)
            throw ConfigError(path_ + "." + key + ": expected a nonnegative integer");
        }
        out = v->get<T>();
      } catch (const json::exception&) {
        throw ConfigError(path_ + "." + key + ": wrong type");
      }
    }
  }

  template <typename T, typename Parse>
  void read_enum(const std::string& key, T& out, Parse parse) {
    if (const json* v = get(key)) {
      if (!v->is_string()) throw ConfigError(path_ + "." + key + ": expected a string");
      out = parse(v->get<std::string>());
    }
  }

  template <typename T, typename Parse>
  void read_enum_list(const std::string& key, std::vector<T>& out, Parse parse) {
    if (const json* v = get(key)) {
      if (!v->is_array()) throw ConfigError(path_ + "." + key + ": expected an array");
      out.clear();
      for (const auto& item : *v) {
        if (!item.is_string()) throw ConfigError(path_ + "." + key + ": expected strings");
        out.push_back(parse(item.get<std::string>()));
      }
    }
  }

  const std::string& path() const { return path_; }

 private:
  const json* doc_ = nullptr;
  std::string path_;
  std::set<std::string> seen_;
};

const json& child(const json& doc, const std::string& key) {
  static const json null_doc;
  return doc.contains(key) ? doc.at(key) : null_doc;
}

ProjectionMode mode_from_string(const std::string& s) {
  try {
    return projection_mode_from_string(s);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

FeatureKind feature_from_string(const std::string& s) {
  try {
    return feature_kind_from_string(s);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

TaskSpec RunConfig::resolved_task() const {
  TaskSpec t = task;
  t.seed = derive_seed(seed, kTask);
  return t;
}

ModelConfig RunConfig::resolved_model() const { return adapt_model(model, task); }

ModelSeeds RunConfig::model_seeds() const {
  return {derive_seed(seed, kInit), feature_seed.value_or(derive_seed(seed, kFeatures)), derive_seed(seed, kSubsample)};
}

TrainConfig RunConfig::resolved_train() const {
  TrainConfig t = train;
  t.batch_seed = derive_seed(seed, kBatches);
  return t;
}

std::uint64_t RunConfig::verify_seed() const { return derive_seed(seed, kVerify); }

BenchConfig RunConfig::resolved_bench() const {
  BenchConfig b = bench;
  b.seed = derive_seed(seed, kBench);
  return b;
}

void RunConfig::validate() const {
  task.validate();
  resolved_model().validate();
  optimizer.validate();
  train.validate();
  verify.validate();
  bench.validate();
  for (double eta : eta_sweep)
    if (!(eta >= 0.0)) throw ConfigError("train: eta_sweep values must be nonnegative");
  if (spectrum.source != "model" && spectrum.source != "file")
    throw ConfigError("spectrum: source must be 'model' or 'file'");
  if (spectrum.batch_size < 1) throw ConfigError("spectrum: batch_size must be positive");
}

RunConfig parse_run_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  RunConfig cfg;
  Section top(doc, "config");
  if (const json* schema = top.get("schema")) {
    if (!schema->is_number_integer() || schema->get<int>() != 1) throw ConfigError("config: unsupported schema");
  }
  top.read("seed", cfg.seed);

  {
    Section m(child(doc, "model"), "model");
    top.get("model");
    auto& mc = cfg.model;
    m.read("layers", mc.layers);
    m.read("heads", mc.heads);
    m.read("d_model", mc.d_model);
    m.read("head_dim", mc.head_dim);
    m.read("s", mc.s);
    m.read("d_v", mc.d_v);
    m.read_enum_list("kinds", mc.kinds, attention_kind_from_string);
    m.read_enum("mode", mc.mode, mode_from_string);
    m.read("rank_multi", mc.rank_multi);
    m.read("causal", mc.causal);
    m.read("eta", mc.eta);
    m.read("ffn_mult", mc.ffn_mult);
    {
      Section f(child(child(doc, "model"), "feature_map"), "model.feature_map");
      m.get("feature_map");
      f.read_enum("kind", mc.fmap, feature_from_string);
      Index p = mc.head_dim;
      f.read("p", p);
      if (p != mc.head_dim) throw ConfigError("model.feature_map.p must equal model.head_dim");
      f.read("epsilon", mc.fmap_eps);
      if (const json* s = f.get("seed"); s && !s->is_null()) {
        if (!s->is_number_unsigned()) throw ConfigError("model.feature_map.seed: expected a nonnegative integer");
        cfg.feature_seed = s->get<std::uint64_t>();
      }
    }
  }
  {
    Section t(child(doc, "task"), "task");
    top.get("task");
    t.read_enum("kind", cfg.task.kind, task_kind_from_string);
    t.read("seq_len", cfg.task.seq_len);
    t.read("vocab", cfg.task.vocab);
    t.read("classes", cfg.task.classes);
    t.read("input_dim", cfg.task.input_dim);
    t.read("output_dim", cfg.task.output_dim);
    t.read("target_rank", cfg.task.target_rank);
    t.read("train_size", cfg.task.train_size);
    t.read("test_size", cfg.task.test_size);
  }
  {
    Section o(child(doc, "optimizer"), "optimizer");
    top.get("optimizer");
    o.read_enum("kind", cfg.optimizer.kind, optimizer_kind_from_string);
    o.read("lr", cfg.optimizer.lr);
    o.read("beta1", cfg.optimizer.beta1);
    o.read("beta2", cfg.optimizer.beta2);
    o.read("epsilon", cfg.optimizer.epsilon);
    o.read("weight_decay", cfg.optimizer.weight_decay);
    o.read("lambda_lr_scale", cfg.optimizer.lambda_lr_scale);
    o.read("lambda_weight_decay", cfg.optimizer.lambda_weight_decay);
  }
  {
    Section t(child(doc, "train"), "train");
    top.get("train");
    t.read("steps", cfg.train.steps);
    t.read("batch_size", cfg.train.batch_size);
    t.read("log_every", cfg.train.log_every);
    t.read("divergence_threshold", cfg.train.divergence_threshold);
    t.read("eta_sweep", cfg.eta_sweep);
    t.read("resume_from", cfg.resume_from);
  }
  {
    Section v(child(doc, "verify"), "verify");
    top.get("verify");
    v.read("cases", cfg.verify.cases);
    v.read("min_tokens", cfg.verify.min_tokens);
    v.read("max_tokens", cfg.verify.max_tokens);
    v.read("max_dim", cfg.verify.max_dim);
    v.read_enum_list("modes", cfg.verify.modes, mode_from_string);
    v.read_enum_list("feature_maps", cfg.verify.feature_maps, feature_from_string);
    v.read("corrupt", cfg.verify.corrupt);
  }
  {
    Section s(child(doc, "spectrum"), "spectrum");
    top.get("spectrum");
    s.read("source", cfg.spectrum.source);
    s.read("matrix", cfg.spectrum.matrix);
    s.read("checkpoint", cfg.spectrum.checkpoint);
    s.read("layer", cfg.spectrum.layer);
    s.read("head", cfg.spectrum.head);
    s.read("batch_seed", cfg.spectrum.batch_seed);
    s.read("batch_size", cfg.spectrum.batch_size);
  }
  {
    Section b(child(doc, "bench"), "bench");
    top.get("bench");
    b.read("sizes", cfg.bench.sizes);
    b.read("d", cfg.bench.d);
    b.read("s", cfg.bench.s);
    b.read("d_v", cfg.bench.d_v);
    b.read("heads", cfg.bench.heads);
    b.read("repeats", cfg.bench.repeats);
  }
  cfg.validate();
  return cfg;
}

json to_json(const RunConfig& cfg) {
  json kinds = json::array();
  for (auto k : cfg.model.kinds) kinds.push_back(to_string(k));
  json modes = json::array();
  for (auto m : cfg.verify.modes) modes.push_back(to_string_mode(m));
  json fmaps = json::array();
  for (auto f : cfg.verify.feature_maps) fmaps.push_back(to_string(f));
  const auto& mc = cfg.model;
  json doc;
  doc["schema"] = 1;
  doc["seed"] = cfg.seed;
  doc["model"] = {{"layers", mc.layers},
                  {"heads", mc.heads},
                  {"d_model", mc.d_model},
                  {"head_dim", mc.head_dim},
                  {"s", mc.s},
                  {"d_v", mc.d_v},
                  {"kinds", kinds},
                  {"feature_map",
                   {{"kind", to_string(mc.fmap)},
                    {"p", mc.head_dim},
                    {"seed", cfg.feature_seed ? json(*cfg.feature_seed) : json(nullptr)},
                    {"epsilon", mc.fmap_eps}}},
                  {"mode", to_string_mode(mc.mode)},
                  {"rank_multi", mc.rank_multi},
                  {"causal", mc.causal},
                  {"eta", mc.eta},
                  {"ffn_mult", mc.ffn_mult}};
  doc["task"] = {{"kind", to_string(cfg.task.kind)},       {"seq_len", cfg.task.seq_len},
                 {"vocab", cfg.task.vocab},                {"classes", cfg.task.classes},
                 {"input_dim", cfg.task.input_dim},        {"output_dim", cfg.task.output_dim},
                 {"target_rank", cfg.task.target_rank},    {"train_size", cfg.task.train_size},
                 {"test_size", cfg.task.test_size}};
  doc["optimizer"] = {{"kind", to_string(cfg.optimizer.kind)},
                      {"lr", cfg.optimizer.lr},
                      {"beta1", cfg.optimizer.beta1},
                      {"beta2", cfg.optimizer.beta2},
                      {"epsilon", cfg.optimizer.epsilon},
                      {"weight_decay", cfg.optimizer.weight_decay},
                      {"lambda_lr_scale", cfg.optimizer.lambda_lr_scale},
                      {"lambda_weight_decay", cfg.optimizer.lambda_weight_decay}};
  doc["train"] = {{"steps", cfg.train.steps},
                  {"batch_size", cfg.train.batch_size},
                  {"log_every", cfg.train.log_every},
                  {"divergence_threshold", cfg.train.divergence_threshold},
                  {"eta_sweep", cfg.eta_sweep},
                  {"resume_from", cfg.resume_from}};
  doc["verify"] = {{"cases", cfg.verify.cases},
                   {"min_tokens", cfg.verify.min_tokens},
                   {"max_tokens", cfg.verify.max_tokens},
                   {"max_dim", cfg.verify.max_dim},
                   {"modes", modes},
                   {"feature_maps", fmaps},
                   {"corrupt", cfg.verify.corrupt}};
  doc["spectrum"] = {{"source", cfg.spectrum.source},         {"matrix", cfg.spectrum.matrix},
                     {"checkpoint", cfg.spectrum.checkpoint}, {"layer", cfg.spectrum.layer},
                     {"head", cfg.spectrum.head},             {"batch_seed", cfg.spectrum.batch_seed},
                     {"batch_size", cfg.spectrum.batch_size}};
  doc["bench"] = {{"sizes", cfg.bench.sizes}, {"d", cfg.bench.d},         {"s", cfg.bench.s},
                  {"d_v", cfg.bench.d_v},     {"heads", cfg.bench.heads}, {"repeats", cfg.bench.repeats}};
  return doc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

}  // namespace pattn
