#ifndef PATTN_CONFIG_HPP
#define PATTN_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pattn/bench.hpp"
#include "pattn/train.hpp"
#include "pattn/verify_grid.hpp"

namespace pattn {

struct SpectrumConfig {
  /// "model" analyzes a trained checkpoint, "file" a CSV matrix.
  std::string source = "model";
  std::string matrix;
  std::string checkpoint;
  /// -1 selects the last layer.
  Index layer = -1;
  Index head = 0;
  std::uint64_t batch_seed = 0;
  Index batch_size = 8;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  /// Feature direction seed; derived from `seed` when unset.
  std::optional<std::uint64_t> feature_seed;
  TaskSpec task;
  OptimizerConfig optimizer;
  TrainConfig train;
  /// When non-empty, one run per value replaces model.eta.
  std::vector<double> eta_sweep;
  /// Checkpoint directory to continue from.
  std::string resume_from;
  VerifyGridConfig verify;
  SpectrumConfig spectrum;
  BenchConfig bench;

  /// Task, model and training settings with every derived seed filled in.
  TaskSpec resolved_task() const;
  ModelConfig resolved_model() const;
  ModelSeeds model_seeds() const;
  TrainConfig resolved_train() const;
  std::uint64_t verify_seed() const;
  BenchConfig resolved_bench() const;
  void validate() const;
};

/// Parses a config document over the defaults; unknown keys are rejected.
RunConfig parse_run_config(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace pattn

#endif  // PATTN_CONFIG_HPP
