#include "pattn/tasks.hpp"

#include "pattn/random.hpp"

namespace pattn {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::MajorityToken: return "majority_token";
    case TaskKind::CopyFirst: return "copy_first";
    case TaskKind::LowRankRegression: return "low_rank_regression";
  }
  return "unknown";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "majority_token") return TaskKind::MajorityToken;
  if (name == "copy_first") return TaskKind::CopyFirst;
  if (name == "low_rank_regression") return TaskKind::LowRankRegression;
  throw ConfigError("unknown task '" + name + "'");
}

Index TaskSpec::outputs() const {
  switch (kind) {
    case TaskKind::MajorityToken: return classes;
    case TaskKind::CopyFirst: return vocab;
    case TaskKind::LowRankRegression: return output_dim;
  }
  return 0;
}

void TaskSpec::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("task: " + what);
  };
  need(seq_len >= 1, "seq_len must be positive");
  need(train_size >= 1 && test_size >= 1, "train and test sizes must be positive");
  switch (kind) {
    case TaskKind::MajorityToken: need(classes >= 2 && vocab >= classes, "need 2 <= classes <= vocab"); break;
    case TaskKind::CopyFirst: need(vocab >= 2, "vocab must be at least 2"); break;
    case TaskKind::LowRankRegression:
      need(input_dim >= 1 && output_dim >= 1, "dimensions must be positive");
      need(target_rank >= 1 && target_rank <= std::min(input_dim, output_dim),
           "target_rank must lie in [1, min(input_dim, output_dim)]");
      break;
  }
}

Index majority_label(const std::vector<Index>& tokens, Index classes) {
  std::vector<Index> counts(static_cast<std::size_t>(classes), 0);
  for (Index t : tokens)
    if (t >= 0 && t < classes) ++counts[static_cast<std::size_t>(t)];
  Index best = 0;
  for (Index c = 1; c < classes; ++c)
    if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)]) best = c;
  return best;
}

Batch Dataset::batch(const std::vector<Index>& rows) const {
  Batch b;
  for (Index r : rows) {
    const auto i = static_cast<std::size_t>(r);
    if (spec.is_classification()) {
      b.tokens.push_back(tokens.at(i));
      b.labels.push_back(labels.at(i));
    } else {
      b.inputs.push_back(inputs.at(i));
      b.targets.push_back(targets.at(i));
    }
  }
  return b;
}

Dataset make_task(const TaskSpec& spec) {
  spec.validate();
  Dataset data;
  data.spec = spec;
  Rng rng(spec.seed);
  const Index total = spec.train_size + spec.test_size;
  if (spec.kind == TaskKind::LowRankRegression) {
    data.a = random_normal<double>(spec.input_dim, spec.target_rank, rng);
    data.b = random_normal<double>(spec.target_rank, spec.output_dim, rng);
  }
  for (Index n = 0; n < total; ++n) {
    if (spec.kind == TaskKind::LowRankRegression) {
      const ad::Mat x = random_normal<double>(spec.seq_len, spec.input_dim, rng);
      data.targets.push_back(x * data.a * data.b);
      data.inputs.push_back(x);
      continue;
    }
    std::vector<Index> seq(static_cast<std::size_t>(spec.seq_len));
    for (auto& t : seq) t = static_cast<Index>(rng.below(static_cast<std::uint64_t>(spec.vocab)));
    data.labels.push_back(spec.kind == TaskKind::MajorityToken ? majority_label(seq, spec.classes) : seq.front());
    data.tokens.push_back(std::move(seq));
  }
  for (Index n = 0; n < total; ++n) (n < spec.train_size ? data.train : data.test).push_back(n);
  return data;
}

std::vector<Index> batch_rows(const Dataset& data, std::uint64_t seed, Index step, Index batch_size) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(step)));
  std::vector<Index> rows;
  for (Index i = 0; i < batch_size; ++i)
    rows.push_back(data.train[static_cast<std::size_t>(rng.below(data.train.size()))]);
  return rows;
}

ModelConfig adapt_model(ModelConfig config, const TaskSpec& spec) {
  config.seq_len = spec.seq_len;
  config.outputs = spec.outputs();
  if (spec.is_classification()) {
    config.head = TaskHeadKind::Classification;
    config.vocab = spec.vocab;
    config.input_dim = 0;
  } else {
    config.head = TaskHeadKind::Regression;
    config.vocab = 0;
    config.input_dim = spec.input_dim;
  }
  return config;
}

}  // namespace pattn
