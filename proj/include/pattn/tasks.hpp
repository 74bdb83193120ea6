#ifndef PATTN_TASKS_HPP
#define PATTN_TASKS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "pattn/model.hpp"

namespace pattn {

enum class TaskKind { MajorityToken, CopyFirst, LowRankRegression };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::MajorityToken;
  Index seq_len = 16;
  Index vocab = 8;
  /// MajorityToken labels range over symbols 0..classes-1; other ids are distractors.
  Index classes = 2;
  Index input_dim = 8;
  Index output_dim = 4;
  Index target_rank = 2;
  std::uint64_t seed = 0;
  Index train_size = 2048;
  Index test_size = 512;

  /// Classes for classification tasks, output width for regression.
  Index outputs() const;
  bool is_classification() const { return kind != TaskKind::LowRankRegression; }
  void validate() const;
};

/// Most frequent symbol among 0..classes-1; ties go to the lowest id.
Index majority_label(const std::vector<Index>& tokens, Index classes);

struct Dataset {
  TaskSpec spec;
  std::vector<std::vector<Index>> tokens;
  std::vector<Index> labels;
  std::vector<ad::Mat> inputs;
  std::vector<ad::Mat> targets;
  /// Regression factors, targets = X A B.
  ad::Mat a, b;
  std::vector<Index> train;
  std::vector<Index> test;

  Batch batch(const std::vector<Index>& rows) const;
};

Dataset make_task(const TaskSpec& spec);

/// Training rows for `step`, drawn with replacement from a stream that depends
/// only on (seed, step).
std::vector<Index> batch_rows(const Dataset& data, std::uint64_t seed, Index step, Index batch_size);

/// Applies the task's input and output widths to a model configuration.
ModelConfig adapt_model(ModelConfig config, const TaskSpec& spec);

}  // namespace pattn

#endif  // PATTN_TASKS_HPP
