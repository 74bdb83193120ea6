#ifndef PATTN_TRAIN_HPP
#define PATTN_TRAIN_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pattn/model.hpp"
#include "pattn/tasks.hpp"

namespace pattn {

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// L2 coefficient added to every gradient.
  double weight_decay = 0.0;
  /// Multiplier on lr for lambda_raw tensors.
  double lambda_lr_scale = 1.0;
  /// Whether lambda_raw tensors receive weight decay.
  bool lambda_weight_decay = true;

  void validate() const;
};

struct OptimizerState {
  std::int64_t t = 0;
  ParamMap m;
  ParamMap v;
};

/// One update of `params` from `grads`.
void optimizer_step(ParamMap& params, const ParamMap& grads, OptimizerState& state, const OptimizerConfig& cfg);

struct TrainConfig {
  Index steps = 2000;
  Index batch_size = 32;
  Index log_every = 100;
  std::uint64_t batch_seed = 0;
  /// Loss above this (or non-finite) aborts the run.
  double divergence_threshold = 1e6;

  void validate() const;
};

struct TrainRow {
  Index step = 0;
  double task_loss = 0.0;
  std::vector<double> layer_j;
  double penalty = 0.0;
  double total = 0.0;
  double eval_metric = 0.0;
};

struct TrainLog {
  std::vector<Index> primal_layers;
  std::vector<TrainRow> rows;

  std::string csv() const;
};

struct TrainState {
  Model model;
  OptimizerState optimizer;
  /// Updates applied so far.
  Index step = 0;
};

class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(const std::string& what, TrainLog log) : DivergenceError(what), log_(std::move(log)) {}
  const TrainLog& log() const { return log_; }

 private:
  TrainLog log_;
};

/// Test accuracy for classification tasks, mean squared error for regression.
double evaluate(const Model& model, const Dataset& data, const std::vector<Index>& rows, Index chunk = 128);

/// Runs updates state.step .. cfg.steps-1. A row is logged before the update
/// at every multiple of log_every and after the final update.
TrainLog train(TrainState& state, const Dataset& data, const OptimizerConfig& opt, const TrainConfig& cfg);

/// Gradients of the loss with respect to every parameter.
ParamMap gradients(const Model& model, const Batch& batch, ForwardResult* result = nullptr);

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state);
/// Restores parameters, optimizer moments and the step counter into a state
/// built from the same model configuration.
void load_checkpoint(const std::filesystem::path& dir, TrainState& state);

}  // namespace pattn

#endif  // PATTN_TRAIN_HPP
