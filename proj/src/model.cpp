#include "pattn/model.hpp"

#include <cmath>

#include "pattn/random.hpp"

namespace pattn {

std::string to_string(AttentionKind kind) { return kind == AttentionKind::Primal ? "primal" : "canonical"; }

AttentionKind attention_kind_from_string(const std::string& name) {
  if (name == "primal") return AttentionKind::Primal;
  if (name == "canonical") return AttentionKind::Canonical;
  throw ConfigError("unknown attention kind '" + name + "'");
}

std::string to_string(TaskHeadKind kind) {
  return kind == TaskHeadKind::Classification ? "classification" : "regression";
}

TaskHeadKind task_head_from_string(const std::string& name) {
  if (name == "classification") return TaskHeadKind::Classification;
  if (name == "regression") return TaskHeadKind::Regression;
  throw ConfigError("unknown task head '" + name + "'");
}

AttentionKind ModelConfig::kind(Index layer) const {
  if (kinds.empty()) return AttentionKind::Primal;
  return kinds.at(static_cast<std::size_t>(layer));
}

Index ModelConfig::weight_capacity() const {
  if (mode == ProjectionMode::DataIndependent) return head_dim;
  return std::max(s * rank_multi, seq_len);
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model: " + what);
  };
  need(layers >= 1 && heads >= 1, "layers and heads must be positive");
  need(d_model >= 1 && head_dim >= 1 && d_v >= 1 && ffn_mult >= 1, "dimensions must be positive");
  need(s >= 1, "s must be positive");
  need(seq_len >= 1, "seq_len must be positive");
  need(outputs >= 1, "outputs must be positive");
  need(eta >= 0.0, "eta must be nonnegative");
  need(vocab > 0 || input_dim > 0, "either vocab or input_dim must be set");
  need(kinds.empty() || static_cast<Index>(kinds.size()) == layers, "one attention kind per layer");
  need(rank_multi >= 1, "rank_multi must be positive");
  need(fmap_eps > 0.0, "feature map epsilon must be positive");
  bool primal = false;
  for (Index l = 0; l < layers; ++l) primal = primal || kind(l) == AttentionKind::Primal;
  if (primal && mode == ProjectionMode::DataDependent)
    need(head_dim == d_model, "data-dependent Primal layers need head_dim == d_model");
  if (head == TaskHeadKind::Classification) need(outputs >= 2, "classification needs at least 2 classes");
}

std::string param_name(Index layer, Index head, const std::string& tensor) {
  std::string name = "L" + std::to_string(layer);
  if (head >= 0) name += ".H" + std::to_string(head);
  return name + "." + tensor;
}

Model Model::init(const ModelConfig& config, const ModelSeeds& seeds) {
  config.validate();
  Model m;
  m.config = config;
  m.seeds = seeds;
  Rng rng(seeds.init);
  auto uniform = [&](const std::string& name, Index rows, Index cols, Index fan_in) {
    m.params[name] = random_uniform<double>(rows, cols, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  };
  const Index d = config.d_model;
  if (config.vocab > 0) {
    uniform("embed", config.vocab, d, 1);
  } else {
    uniform("input_proj", config.input_dim, d, config.input_dim);
  }
  uniform("pos", config.seq_len, d, 1);
  for (Index l = 0; l < config.layers; ++l) {
    for (Index h = 0; h < config.heads; ++h) {
      uniform(param_name(l, h, "w_q"), config.head_dim, d, d);
      uniform(param_name(l, h, "w_k"), config.head_dim, d, d);
      if (config.kind(l) == AttentionKind::Primal) {
        const Index rows = config.weight_capacity();
        const Index fan_in = config.mode == ProjectionMode::DataIndependent ? config.head_dim
                                                                            : std::min(rows, config.seq_len);
        uniform(param_name(l, h, "w_e"), rows, config.s, fan_in);
        uniform(param_name(l, h, "w_r"), rows, config.s, fan_in);
        m.params[param_name(l, h, "lambda_raw")] = ad::Mat::Zero(config.s, 1);
        uniform(param_name(l, h, "w_o"), config.d_v, 2 * config.s, 2 * config.s);
      } else {
        uniform(param_name(l, h, "w_v"), config.d_v, d, d);
      }
    }
    uniform(param_name(l, -1, "mix"), d, config.heads * config.d_v, config.heads * config.d_v);
    const Index hidden = config.ffn_mult * d;
    uniform(param_name(l, -1, "ffn.w1"), hidden, d, d);
    m.params[param_name(l, -1, "ffn.b1")] = ad::Mat::Zero(1, hidden);
    uniform(param_name(l, -1, "ffn.w2"), d, hidden, hidden);
    m.params[param_name(l, -1, "ffn.b2")] = ad::Mat::Zero(1, d);
  }
  uniform("head.w", config.outputs, d, d);
  m.params["head.b"] = ad::Mat::Zero(1, config.outputs);
  return m;
}

FeatureMapSpec<double> Model::feature_map(Index layer, Index head) const {
  const auto tag = static_cast<std::uint64_t>(layer * 1024 + head);
  return FeatureMapSpec<double>::make(config.fmap, config.head_dim, config.head_dim,
                                      derive_seed(seeds.features, tag), config.fmap_eps);
}

ProjectionSet<double> Model::projections(Index layer, Index head) const {
  ProjectionSet<double> ps;
  ps.w_q = params.at(param_name(layer, head, "w_q"));
  ps.w_k = params.at(param_name(layer, head, "w_k"));
  if (config.kind(layer) == AttentionKind::Canonical) ps.w_v = params.at(param_name(layer, head, "w_v"));
  return ps;
}

HeadParams<double> Model::head_params(Index layer, Index head) const {
  if (config.kind(layer) != AttentionKind::Primal) throw ConfigError("head_params: layer is not Primal");
  HeadParams<double> hp;
  hp.projections = projections(layer, head);
  hp.w_e = params.at(param_name(layer, head, "w_e"));
  hp.w_r = params.at(param_name(layer, head, "w_r"));
  hp.lambda_raw = params.at(param_name(layer, head, "lambda_raw"));
  hp.mode = config.mode;
  hp.rank_multi = config.rank_multi;
  hp.causal = config.causal;
  hp.subsample_seed = derive_seed(seeds.subsample, static_cast<std::uint64_t>(layer * 1024 + head));
  return hp;
}

Index Batch::size() const {
  return static_cast<Index>(tokens.empty() ? inputs.size() : tokens.size());
}

Index Batch::length(Index b) const {
  const auto i = static_cast<std::size_t>(b);
  return tokens.empty() ? inputs[i].rows() : static_cast<Index>(tokens[i].size());
}

LeafMap attach(ad::Tape& tape, const ParamMap& params, bool requires_grad) {
  LeafMap leaves;
  for (const auto& [name, value] : params) leaves.emplace(name, tape.leaf(value, requires_grad));
  return leaves;
}

namespace {

struct HeadVars {
  ad::Var w_q_t, w_k_t;
  ad::Var w_e, w_r, lambda, w_o_t, w_v_t;
  ad::Var directions_t;
  FeatureMapSpec<double> fmap = FeatureMapSpec<double>::identity(1);
  HeadParams<double> params;
};

ad::Var feature_map(const HeadVars& hv, ad::Var z) {
  switch (hv.fmap.kind()) {
    case FeatureKind::Cosine: return ad::row_normalize(z, hv.fmap.epsilon());
    case FeatureKind::Identity: return z;
    case FeatureKind::RandomExponential:
      return ad::exp(ad::add_col(ad::matmul(z, hv.directions_t), ad::scale(ad::row_sq_norm(z), -0.5)));
  }
  throw ConfigError("feature map: unknown kind");
}

void require_finite_layer(const ad::Mat& m, Index layer, const char* where) {
  if (!m.allFinite())
    throw NumericError("forward: non-finite values in layer " + std::to_string(layer) + " (" + where + ")");
}

}  // namespace

ForwardResult forward_loss(const Model& model, const Batch& batch, ad::Tape& tape, const LeafMap& leaves) {
  const ModelConfig& cfg = model.config;
  const Index nb = batch.size();
  if (nb < 1) throw ShapeError("forward_loss: empty batch");
  auto leaf = [&](const std::string& name) { return leaves.at(name); };
  const bool classify = cfg.head == TaskHeadKind::Classification;
  if (classify && static_cast<Index>(batch.labels.size()) != nb)
    throw ShapeError("forward_loss: one label per sequence required");
  if (!classify && static_cast<Index>(batch.targets.size()) != nb)
    throw ShapeError("forward_loss: one target per sequence required");

  ForwardResult res;
  res.layer_inputs.assign(static_cast<std::size_t>(cfg.layers), {});
  res.e_scores.assign(static_cast<std::size_t>(cfg.layers), {});
  res.r_scores.assign(static_cast<std::size_t>(cfg.layers), {});

  // Per-head tensors shared across sequences.
  std::vector<std::vector<HeadVars>> heads(static_cast<std::size_t>(cfg.layers));
  std::vector<ad::Var> mix_t, w1_t, w2_t;
  for (Index l = 0; l < cfg.layers; ++l) {
    for (Index h = 0; h < cfg.heads; ++h) {
      HeadVars hv;
      hv.w_q_t = ad::transpose(leaf(param_name(l, h, "w_q")));
      hv.w_k_t = ad::transpose(leaf(param_name(l, h, "w_k")));
      if (cfg.kind(l) == AttentionKind::Primal) {
        hv.w_e = leaf(param_name(l, h, "w_e"));
        hv.w_r = leaf(param_name(l, h, "w_r"));
        hv.lambda = ad::exp(leaf(param_name(l, h, "lambda_raw")));
        hv.w_o_t = ad::transpose(leaf(param_name(l, h, "w_o")));
        hv.fmap = model.feature_map(l, h);
        hv.params = model.head_params(l, h);
        if (hv.fmap.kind() == FeatureKind::RandomExponential)
          hv.directions_t = tape.constant(hv.fmap.directions().transpose());
      } else {
        hv.w_v_t = ad::transpose(leaf(param_name(l, h, "w_v")));
      }
      heads[static_cast<std::size_t>(l)].push_back(std::move(hv));
    }
    mix_t.push_back(ad::transpose(leaf(param_name(l, -1, "mix"))));
    w1_t.push_back(ad::transpose(leaf(param_name(l, -1, "ffn.w1"))));
    w2_t.push_back(ad::transpose(leaf(param_name(l, -1, "ffn.w2"))));
    res.e_scores[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(cfg.heads), {});
    res.r_scores[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(cfg.heads), {});
  }
  const ad::Var head_w_t = ad::transpose(leaf("head.w"));
  const ad::Var input_proj = cfg.vocab > 0 ? ad::Var{} : leaf("input_proj");

  // j_sum[l][h] accumulates J over sequences.
  std::vector<std::vector<ad::Var>> j_sum(static_cast<std::size_t>(cfg.layers),
                                          std::vector<ad::Var>(static_cast<std::size_t>(cfg.heads)));
  std::vector<ad::Var> pooled, predictions;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));

  for (Index b = 0; b < nb; ++b) {
    const Index n = batch.length(b);
    if (n < 1 || n > cfg.seq_len) throw ShapeError("forward_loss: sequence length outside [1, seq_len]");
    ad::Var x;
    if (cfg.vocab > 0) {
      const auto& toks = batch.tokens[static_cast<std::size_t>(b)];
      for (Index t : toks)
        if (t < 0 || t >= cfg.vocab) throw ShapeError("forward_loss: token id outside the vocabulary");
      x = ad::gather_rows(leaf("embed"), toks);
    } else {
      const ad::Mat& in = batch.inputs[static_cast<std::size_t>(b)];
      if (in.cols() != cfg.input_dim) throw ShapeError("forward_loss: input width differs from input_dim");
      x = ad::matmul(tape.constant(in), input_proj);
    }
    x = ad::add(x, ad::slice_rows(leaf("pos"), 0, n));

    for (Index l = 0; l < cfg.layers; ++l) {
      const auto lu = static_cast<std::size_t>(l);
      const ad::Var h_in = ad::row_standardize(x);
      res.layer_inputs[lu].push_back(h_in.value());
      std::vector<ad::Var> head_out;
      for (Index h = 0; h < cfg.heads; ++h) {
        const HeadVars& hv = heads[lu][static_cast<std::size_t>(h)];
        const ad::Var q = ad::matmul(h_in, hv.w_q_t);
        const ad::Var k = ad::matmul(h_in, hv.w_k_t);
        if (cfg.kind(l) == AttentionKind::Canonical) {
          const ad::Var v = ad::matmul(h_in, hv.w_v_t);
          head_out.push_back(ad::matmul(ad::row_softmax(ad::matmul(q, ad::transpose(k)), inv_sqrt_d, cfg.causal), v));
          continue;
        }
        const ad::Var phi_q = feature_map(hv, q);
        const ad::Var phi_k = feature_map(hv, k);
        ad::Var e, r, w_e, w_r;
        if (cfg.mode == ProjectionMode::DataIndependent) {
          w_e = hv.w_e;
          w_r = hv.w_r;
          e = ad::matmul(phi_q, w_e);
          r = ad::matmul(phi_k, w_r);
        } else if (cfg.causal) {
          w_e = ad::slice_rows(hv.w_e, 0, n);
          w_r = ad::slice_rows(hv.w_r, 0, n);
          const ad::Var h_t = ad::transpose(h_in);
          e = ad::matmul(ad::mask_lower(ad::matmul(phi_q, h_t)), w_e);
          r = ad::matmul(ad::mask_lower(ad::matmul(phi_k, h_t)), w_r);
        } else {
          const auto idx = subsample_indices(n, hv.params);
          const Index rows = static_cast<Index>(idx.size());
          w_e = ad::slice_rows(hv.w_e, 0, rows);
          w_r = ad::slice_rows(hv.w_r, 0, rows);
          const ad::Var fx_t = ad::transpose(ad::gather_rows(h_in, idx));
          e = ad::matmul(phi_q, ad::matmul(fx_t, w_e));
          r = ad::matmul(phi_k, ad::matmul(fx_t, w_r));
        }
        if (hv.fmap.kind() == FeatureKind::RandomExponential) {
          const ad::Var dhat = cfg.causal ? ad::row_dot(phi_q, ad::cumsum_rows(phi_k))
                                          : ad::matmul(phi_q, ad::transpose(ad::col_sum(phi_k)));
          const ad::Var inv_sqrt = ad::pow(dhat, -0.5);
          e = ad::row_scale(e, inv_sqrt);
          r = ad::row_scale(r, inv_sqrt);
        }
        require_finite_layer(e.value(), l, "e_scores");
        require_finite_layer(r.value(), l, "r_scores");
        res.e_scores[lu][static_cast<std::size_t>(h)].push_back(e.value());
        res.r_scores[lu][static_cast<std::size_t>(h)].push_back(r.value());
        const ad::Var quad = ad::add(ad::matmul(ad::col_sum(ad::hadamard(e, e)), hv.lambda),
                                     ad::matmul(ad::col_sum(ad::hadamard(r, r)), hv.lambda));
        const ad::Var j = ad::sub(ad::scale(quad, 0.5), ad::trace_atb(w_e, w_r));
        auto& acc = j_sum[lu][static_cast<std::size_t>(h)];
        acc = acc.tape ? ad::add(acc, j) : j;
        head_out.push_back(ad::matmul(ad::concat_cols({e, r}), hv.w_o_t));
      }
      const ad::Var attn = ad::matmul(head_out.size() == 1 ? head_out[0] : ad::concat_cols(head_out), mix_t[lu]);
      require_finite_layer(attn.value(), l, "attention");
      x = ad::add(x, attn);
      const ad::Var f = ad::row_standardize(x);
      const ad::Var hidden = ad::relu(ad::add_row(ad::matmul(f, w1_t[lu]), leaf(param_name(l, -1, "ffn.b1"))));
      x = ad::add(x, ad::add_row(ad::matmul(hidden, w2_t[lu]), leaf(param_name(l, -1, "ffn.b2"))));
      require_finite_layer(x.value(), l, "feed-forward");
    }
    const ad::Var z = ad::row_standardize(x);
    res.token_states.push_back(z.value());
    if (classify) {
      pooled.push_back(ad::mean_rows(z));
    } else {
      predictions.push_back(ad::add_row(ad::matmul(z, head_w_t), leaf("head.b")));
    }
  }

  ad::Var out;
  if (classify) {
    out = ad::add_row(ad::matmul(ad::concat_rows(pooled), head_w_t), leaf("head.b"));
    res.task_loss = ad::cross_entropy(out, batch.labels);
  } else {
    out = ad::concat_rows(predictions);
    std::vector<ad::Var> targets;
    for (const auto& t : batch.targets) targets.push_back(tape.constant(t));
    res.task_loss = ad::mse(out, ad::concat_rows(targets));
  }
  res.outputs = out.value();

  std::vector<std::vector<double>> per_head;
  ad::Var penalty;
  const double inv_nb = 1.0 / static_cast<double>(nb);
  for (Index l = 0; l < cfg.layers; ++l) {
    if (cfg.kind(l) != AttentionKind::Primal) continue;
    res.primal_layers.push_back(l);
    std::vector<double> layer_heads;
    ad::Var layer_sum;
    for (Index h = 0; h < cfg.heads; ++h) {
      const ad::Var mean_j = ad::scale(j_sum[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)], inv_nb);
      layer_heads.push_back(mean_j.value()(0, 0));
      layer_sum = layer_sum.tape ? ad::add(layer_sum, mean_j) : mean_j;
    }
    per_head.push_back(layer_heads);
    const ad::Var j_l = ad::scale(layer_sum, 1.0 / static_cast<double>(cfg.heads));
    const ad::Var sq = ad::hadamard(j_l, j_l);
    penalty = penalty.tape ? ad::add(penalty, sq) : sq;
  }
  res.report = summarize_ksvd(per_head, cfg.eta);
  res.loss = penalty.tape ? ad::add(res.task_loss, ad::scale(penalty, cfg.eta)) : res.task_loss;
  res.task_value = res.task_loss.value()(0, 0);
  res.loss_value = res.loss.value()(0, 0);
  if (!std::isfinite(res.loss_value)) {
    for (std::size_t i = 0; i < res.report.per_layer_j.size(); ++i)
      if (!std::isfinite(res.report.per_layer_j[i]))
        throw NumericError("forward: non-finite J in layer " + std::to_string(res.primal_layers[i]));
    throw NumericError("forward: non-finite task loss");
  }
  return res;
}

ForwardResult forward_loss(const Model& model, const Batch& batch, ad::Tape& tape) {
  return forward_loss(model, batch, tape, attach(tape, model.params, false));
}

LossBuilder loss_builder(const Model& model, const Batch& batch) {
  return [model, batch](ad::Tape& tape, const LeafMap& leaves) {
    return forward_loss(model, batch, tape, leaves).loss;
  };
}

}  // namespace pattn
