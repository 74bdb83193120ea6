#ifndef PATTN_MODEL_HPP
#define PATTN_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "pattn/attention.hpp"
#include "pattn/autodiff.hpp"
#include "pattn/gradcheck.hpp"
#include "pattn/ksvd_objective.hpp"

namespace pattn {

enum class AttentionKind { Primal, Canonical };
enum class TaskHeadKind { Classification, Regression };

std::string to_string(AttentionKind kind);
AttentionKind attention_kind_from_string(const std::string& name);
std::string to_string(TaskHeadKind kind);
TaskHeadKind task_head_from_string(const std::string& name);

struct ModelConfig {
  Index layers = 1;
  Index heads = 1;
  Index d_model = 16;
  /// d = d_q = d_k = p for every head.
  Index head_dim = 16;
  Index s = 8;
  Index d_v = 16;
  /// One entry per layer; empty means Primal everywhere.
  std::vector<AttentionKind> kinds;
  FeatureKind fmap = FeatureKind::Cosine;
  double fmap_eps = 1e-12;
  ProjectionMode mode = ProjectionMode::DataIndependent;
  Index rank_multi = 10;
  bool causal = false;
  double eta = 0.1;
  TaskHeadKind head = TaskHeadKind::Classification;
  /// Classes, or regression output width.
  Index outputs = 2;
  /// Token vocabulary; 0 selects real-valued inputs of width input_dim.
  Index vocab = 8;
  Index input_dim = 0;
  Index seq_len = 16;
  Index ffn_mult = 2;

  AttentionKind kind(Index layer) const;
  /// Rows of W_e / W_r per data-dependent head.
  Index weight_capacity() const;
  void validate() const;
};

/// Seeds for parameter initialization, random feature directions and F_X
/// subsampling.
struct ModelSeeds {
  std::uint64_t init = 0;
  std::uint64_t features = 0;
  std::uint64_t subsample = 0;
};

std::string param_name(Index layer, Index head, const std::string& tensor);

struct Model {
  ModelConfig config;
  ModelSeeds seeds;
  ParamMap params;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases and lambda_raw.
  static Model init(const ModelConfig& config, const ModelSeeds& seeds);

  FeatureMapSpec<double> feature_map(Index layer, Index head) const;
  /// Head parameters in the form used by the attention and dual-oracle modules.
  HeadParams<double> head_params(Index layer, Index head) const;
  ProjectionSet<double> projections(Index layer, Index head) const;
};

struct Batch {
  std::vector<std::vector<Index>> tokens;
  std::vector<ad::Mat> inputs;
  std::vector<Index> labels;
  std::vector<ad::Mat> targets;

  Index size() const;
  Index length(Index b) const;
};

struct ForwardResult {
  ad::Var loss;
  ad::Var task_loss;
  double loss_value = 0.0;
  double task_value = 0.0;
  KsvdLossReport report;
  /// Layers whose J enters the penalty, in order.
  std::vector<Index> primal_layers;
  /// Classification logits (B x C) or stacked regression predictions.
  ad::Mat outputs;
  /// Standardized attention inputs, [layer][sequence].
  std::vector<std::vector<ad::Mat>> layer_inputs;
  /// Final per-token states before the task head, [sequence].
  std::vector<ad::Mat> token_states;
  /// Per-head score matrices of Primal heads, [layer][head][sequence].
  std::vector<std::vector<std::vector<ad::Mat>>> e_scores;
  std::vector<std::vector<std::vector<ad::Mat>>> r_scores;
};

LeafMap attach(ad::Tape& tape, const ParamMap& params, bool requires_grad = true);

/// Task loss plus eta * sum_l J_l^2, with J_l the mean over heads and
/// sequences of layer l.
ForwardResult forward_loss(const Model& model, const Batch& batch, ad::Tape& tape, const LeafMap& leaves);
ForwardResult forward_loss(const Model& model, const Batch& batch, ad::Tape& tape);

/// Loss builder over the model parameters for gradient checking.
LossBuilder loss_builder(const Model& model, const Batch& batch);

}  // namespace pattn

#endif  // PATTN_MODEL_HPP
