#include "geoformer/model.hpp"

#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numeric>
#include <string>

#include "geoformer/error.hpp"
#include "geoformer/optim.hpp"
#include "geoformer/random.hpp"

namespace geoformer {

namespace {

using json = nlohmann::json;

Matrix glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (double& v : m.values()) v = rng.uniform(-limit, limit);
  return m;
}

std::string gcn_name(std::size_t l) { return "gcn_" + std::to_string(l); }

void add_expert_params(ModelParams& params, Rng& rng, const TrainConfig& config,
                       std::size_t num_features) {
  for (std::size_t e = 0; e < config.num_experts; ++e) {
    params.add(expert_weight_name(e), glorot(rng, num_features, config.expert_dim));
    params.add(expert_bias_name(e), Matrix(1, config.expert_dim), ParamKind::stereographic,
               expert_curvature(config, e).kappa);
  }
  params.add("theta_g", Matrix(kDescriptorDim, config.num_experts));
}

struct ExpertForward {
  Var gate;
  std::vector<Var> embeddings;
  std::vector<Curvature> kappas;
  std::vector<ExpertVars> experts;
};

ExpertForward expert_forward(const BoundParams& params, const GraphContext& ctx,
                             const TrainConfig& config, const Var& x) {
  Tape& tape = x.tape();
  ExpertForward out;
  out.gate = ad::gating_forward(tape.constant(ctx.descriptors), params["theta_g"]);
  for (std::size_t e = 0; e < config.num_experts; ++e) {
    const ExpertVars ev{expert_curvature(config, e), params[expert_weight_name(e)],
                        params[expert_bias_name(e)]};
    out.experts.push_back(ev);
    out.kappas.push_back(ev.kappa);
    out.embeddings.push_back(ad::expert_embed(ev, ctx.adj, x));
  }
  return out;
}

Var link_term(const GraphContext& ctx, const TrainConfig& config, const Var& gate,
              std::span<const Var> embeddings, std::span<const Curvature> kappas,
              std::uint64_t seed) {
  const LinkPairs pairs = sample_link_pairs(*ctx.graph, config.link_neg_ratio, seed);
  if (pairs.u.empty()) throw ContractError("link_reconstruction_loss: graph has no pairs");
  const Var d2 = ad::pair_distance_sq(gate, embeddings, kappas, pairs.u, pairs.v);
  return ad::link_reconstruction_loss(d2, pairs.is_edge);
}

std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t salt, std::uint64_t epoch) {
  std::uint64_t z = seed ^ (salt * 0x9e3779b97f4a7c15ULL) ^ (epoch * 0xbf58476d1ce4e5b9ULL);
  z = (z ^ (z >> 31)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 29);
}

void add_weight_decay(Gradients& grads, const ModelParams& params, double wd) {
  if (wd == 0.0) return;
  for (const auto& [name, p] : params) {
    if (p.kind != ParamKind::euclidean) continue;
    Matrix& g = grads.at(name);
    auto gv = g.values();
    auto xv = p.value.values();
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += wd * xv[i];
  }
}

std::string format_terms(const LossTerms& t) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "ce=%.6g orth=%.6g ent=%.6g reg=%.6g link=%.6g", t.cross_entropy,
                t.orthogonality, t.entropy, t.regularizer, t.link);
  return buf;
}

struct Evaluation {
  Matrix logits;
  double orth = 0.0;
};

Evaluation evaluate_full(const ModelParams& params, const GraphContext& ctx, const TrainConfig& config) {
  Tape tape;
  const BoundParams bound(tape, params);
  const ForwardResult fr = forward(bound, ctx, config);
  return {fr.logits.value(), std::sqrt(orth_penalty(fr.aux.y.value(), 1.0))};
}

Metrics metrics_or_empty(const std::vector<int>& pred, const Graph& g,
                         std::span<const std::uint8_t> mask) {
  if (mask_indices(mask).empty()) return {};
  return compute_metrics(pred, g.labels(), mask, g.num_classes());
}

}  // namespace

void validate_config(const TrainConfig& c) {
  if (c.hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
  if (c.gcn_depth < 1) throw ConfigError("gcn_depth must be >= 1");
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) throw ConfigError("lr must be a finite value >= 0");
  if (c.epochs < 1 || c.epochs > 10000) throw ConfigError("epochs must lie in [1, 10000]");
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(c.beta_attn >= 0.0 && c.beta_attn <= 1.0)) throw ConfigError("beta_attn must lie in [0, 1]");
  if (!(c.lambda_orth >= 0.0)) throw ConfigError("lambda_orth must be >= 0");
  if (!std::isfinite(c.gamma_ent)) throw ConfigError("gamma_ent must be finite");
  if (!(c.gamma_reg >= 0.0)) throw ConfigError("gamma_reg must be >= 0");
  if (!(c.gamma_link >= 0.0)) throw ConfigError("gamma_link must be >= 0");
  if (c.link_neg_ratio < 1) throw ConfigError("link_neg_ratio must be >= 1");
  if (c.descriptor_cap < 1) throw ConfigError("descriptor_cap must be >= 1");
  if (c.optimizer != "adam" && c.optimizer != "radam") {
    throw ConfigError("optimizer must be \"adam\" or \"radam\"");
  }
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(c.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (c.variant == Variant::rmoe) {
    if (c.num_experts < 1) throw ConfigError("num_experts must be >= 1");
    if (c.curvatures.empty()) throw ConfigError("curvatures must be nonempty for variant rmoe");
    if (c.expert_dim < 1) throw ConfigError("expert_dim must be >= 1");
  }
  for (double k : c.curvatures) {
    if (!std::isfinite(k)) throw ConfigError("curvatures must be finite");
  }
}

Curvature expert_curvature(const TrainConfig& config, std::size_t e) {
  if (config.curvatures.empty()) throw ConfigError("curvatures must be nonempty");
  return Curvature(config.curvatures[e % config.curvatures.size()]);
}

std::string expert_weight_name(std::size_t e) { return "expert_" + std::to_string(e) + "_W"; }
std::string expert_bias_name(std::size_t e) { return "expert_" + std::to_string(e) + "_b"; }

ModelParams init_params(const TrainConfig& config, std::size_t num_features, std::size_t num_classes) {
  validate_config(config);
  Rng rng(config.seed);
  const std::size_t h = config.hidden_dim;
  ModelParams params;
  // Shared parameters first so every variant draws them identically.
  params.add("W_in", glorot(rng, num_features, h));
  params.add("W_q", glorot(rng, h, h));
  params.add("W_k", glorot(rng, h, h));
  params.add("W_v", glorot(rng, h, h));
  for (std::size_t l = 0; l < config.gcn_depth; ++l) params.add(gcn_name(l), glorot(rng, h, h));
  params.add("W_out", glorot(rng, h, num_classes));
  if (config.variant == Variant::rmoe) {
    params.add("W_Qc", glorot(rng, num_features, h));
    params.add("W_Kc", glorot(rng, config.expert_dim, h));
    params.add("W_Vc", glorot(rng, config.expert_dim, h));
    add_expert_params(params, rng, config, num_features);
  }
  return params;
}

GraphContext make_context(const Graph& g, const TrainConfig& config) {
  GraphContext ctx;
  ctx.graph = &g;
  ctx.adj = normalize_adjacency(g);
  if (config.variant == Variant::rmoe || config.gamma_link > 0.0) {
    ctx.descriptors = compute_descriptors(g, config.descriptor_hops, config.descriptor_cap, config.seed);
  }
  return ctx;
}

namespace ad {

Var cross_attention_fuse(const Var& x, const Var& xw, const Var& gate, std::span<const Var> embeddings,
                         std::span<const Curvature> kappas, const Var& w_qc, const Var& w_kc,
                         const Var& w_vc) {
  if (embeddings.empty() || embeddings.size() != kappas.size() || gate.cols() != embeddings.size()) {
    throw DimensionError("cross_attention_fuse: need one embedding and curvature per gate column");
  }
  const Var q = matmul(x, w_qc);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  std::vector<Var> logits;
  std::vector<Var> values;
  for (std::size_t e = 0; e < embeddings.size(); ++e) {
    const Var t = log0_rows(kappas[e], embeddings[e]);
    const Var key = matmul(t, w_kc);
    values.push_back(matmul(t, w_vc));
    logits.push_back(add(scale(row_dot(q, key), inv_sqrt_d),
                         log(add_scalar(slice_cols(gate, e, 1), 1e-12))));
  }
  const Var a = softmax_rows(concat_cols(logits));
  Var f = xw;
  for (std::size_t e = 0; e < values.size(); ++e) f = add(f, scale_rows(values[e], slice_cols(a, e, 1)));
  return f;
}

}  // namespace ad

ForwardResult forward(const BoundParams& params, const GraphContext& ctx, const TrainConfig& config,
                      std::optional<std::uint64_t> dropout_seed) {
  const Graph& g = *ctx.graph;
  Tape& tape = params["W_in"].tape();
  const Var x = tape.constant(g.features());
  Var xw = ad::matmul(x, params["W_in"]);
  if (dropout_seed && config.dropout > 0.0) {
    Rng rng(*dropout_seed);
    const double keep = 1.0 - config.dropout;
    Matrix mask(xw.rows(), xw.cols());
    for (double& v : mask.values()) v = rng.uniform() < keep ? 1.0 / keep : 0.0;
    xw = ad::hadamard(xw, tape.constant(std::move(mask)));
  }

  ForwardResult out;
  Var fused = xw;
  if (config.variant == Variant::rmoe) {
    ExpertForward ef = expert_forward(params, ctx, config, x);
    fused = ad::cross_attention_fuse(x, xw, ef.gate, ef.embeddings, ef.kappas, params["W_Qc"],
                                     params["W_Kc"], params["W_Vc"]);
    out.aux.gate = ef.gate;
    out.aux.embeddings = std::move(ef.embeddings);
    out.aux.kappas = std::move(ef.kappas);
    out.aux.experts = std::move(ef.experts);
  }

  const Var q = ad::matmul(fused, params["W_q"]);
  const Var k = ad::matmul(fused, params["W_k"]);
  const Var v = ad::matmul(fused, params["W_v"]);
  const auto [qt, kt] = ad::qk_transform(config.variant, q, k, config.projection_grad);
  const Var z_attn = ad::linear_attention(qt, kt, v, config.beta_attn);

  std::vector<Var> layers;
  for (std::size_t l = 0; l < config.gcn_depth; ++l) layers.push_back(params[gcn_name(l)]);
  const Var z_gnn = ad::gcn_forward(ctx.adj, xw, layers);

  out.aux.y = ad::ensemble_combine(z_gnn, z_attn, config.alpha);
  out.logits = ad::matmul(out.aux.y, params["W_out"]);
  return out;
}

Var composite_loss(const Var& logits, std::span<const int> labels, std::span<const std::size_t> rows,
                   const ForwardAux& aux, const GraphContext& ctx, const TrainConfig& config,
                   std::uint64_t link_seed, LossTerms* terms) {
  if (rows.empty()) throw ContractError("composite_loss: empty mask");
  LossTerms local;
  Var loss = ad::cross_entropy(logits, labels, rows);
  local.cross_entropy = loss.value().scalar();
  const bool projected = config.variant == Variant::stiefel || config.variant == Variant::grassmann;
  if (projected && config.lambda_orth > 0.0) {
    const Var orth = ad::orth_penalty(aux.y, config.lambda_orth);
    local.orthogonality = orth.value().scalar();
    loss = ad::add(loss, orth);
  }
  if (config.variant == Variant::rmoe) {
    if (config.gamma_ent != 0.0) {
      const Var ent = ad::scale(ad::gating_entropy(aux.gate), config.gamma_ent);
      local.entropy = ent.value().scalar();
      loss = ad::add(loss, ent);
    }
    if (config.gamma_reg != 0.0) {
      const Var reg = ad::scale(ad::expert_regularizer(aux.experts), config.gamma_reg);
      local.regularizer = reg.value().scalar();
      loss = ad::add(loss, reg);
    }
    if (config.gamma_link != 0.0) {
      const Var link = ad::scale(link_term(ctx, config, aux.gate, aux.embeddings, aux.kappas, link_seed),
                                 config.gamma_link);
      local.link = link.value().scalar();
      loss = ad::add(loss, link);
    }
  }
  if (terms) *terms = local;
  return loss;
}

Matrix predict_logits(const ModelParams& params, const GraphContext& ctx, const TrainConfig& config) {
  return evaluate_full(params, ctx, config).logits;
}

double orth_residual(const ModelParams& params, const GraphContext& ctx, const TrainConfig& config) {
  return evaluate_full(params, ctx, config).orth;
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> pred(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    pred[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return pred;
}

Metrics evaluate(const ModelParams& params, const GraphContext& ctx, const TrainConfig& config,
                 std::span<const std::uint8_t> mask) {
  if (mask_indices(mask).empty()) throw ContractError("evaluate: empty mask");
  const std::vector<int> pred = argmax_rows(predict_logits(params, ctx, config));
  return compute_metrics(pred, ctx.graph->labels(), mask, ctx.graph->num_classes());
}

RunArtifacts train(const TrainConfig& config, const Graph& g, const SplitMasks& masks,
                   const ModelParams* initial) {
  validate_config(config);
  validate_masks(g, masks);
  const std::vector<std::size_t> train_rows = mask_indices(masks.train);
  if (train_rows.empty()) throw SplitError("train: the train mask selects no nodes");
  const bool has_val = !mask_indices(masks.val).empty();

  const GraphContext ctx = make_context(g, config);
  ModelParams params = initial ? *initial : init_params(config, g.num_features(), g.num_classes());
  OptimState state = make_optim_state(params, AdamHyper{config.lr});
  const bool riemannian = config.optimizer == "radam";

  RunArtifacts run;
  ModelParams best = params;
  double best_wf1 = -1.0;
  std::size_t since_best = 0;
  LossTerms terms;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    try {
      if (config.batches == 0) {
        Tape tape;
        const BoundParams bound(tape, params);
        const ForwardResult fr = forward(bound, ctx, config, epoch_seed(config.seed, 1, epoch));
        const Var loss = composite_loss(fr.logits, g.labels(), train_rows, fr.aux, ctx, config,
                                        epoch_seed(config.seed, 2, epoch), &terms);
        epoch_loss = loss.value().scalar();
        Gradients grads = tape.backward(loss);
        add_weight_decay(grads, params, config.weight_decay);
        optimizer_step(state, params, grads, riemannian);
      } else {
        std::vector<std::size_t> order(g.num_nodes());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(epoch_seed(config.seed, 3, epoch));
        rng.shuffle(order);
        const std::size_t m = std::min(config.batches, g.num_nodes());
        std::size_t used = 0;
        for (std::size_t b = 0; b < m; ++b) {
          const std::size_t lo = b * order.size() / m;
          const std::size_t hi = (b + 1) * order.size() / m;
          std::vector<std::size_t> nodes(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                         order.begin() + static_cast<std::ptrdiff_t>(hi));
          std::sort(nodes.begin(), nodes.end());
          std::vector<std::size_t> rows;
          for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (masks.train[nodes[i]]) rows.push_back(i);
          }
          if (rows.empty()) continue;
          const Graph sub = g.induced(nodes);
          GraphContext sub_ctx;
          sub_ctx.graph = &sub;
          sub_ctx.adj = normalize_adjacency(sub);
          if (!ctx.descriptors.empty()) sub_ctx.descriptors = gather_rows(ctx.descriptors, nodes);
          Tape tape;
          const BoundParams bound(tape, params);
          const std::uint64_t salt = 16 + b;
          const ForwardResult fr = forward(bound, sub_ctx, config, epoch_seed(config.seed, salt, epoch));
          const Var loss = composite_loss(fr.logits, sub.labels(), rows, fr.aux, sub_ctx, config,
                                          epoch_seed(config.seed, salt + 1024, epoch), &terms);
          epoch_loss += loss.value().scalar();
          ++used;
          Gradients grads = tape.backward(loss);
          add_weight_decay(grads, params, config.weight_decay);
          optimizer_step(state, params, grads, riemannian);
        }
        if (used > 0) epoch_loss /= static_cast<double>(used);
      }
    } catch (const NumericalError& e) {
      throw NumericalError("epoch " + std::to_string(epoch) + ": " + e.what() +
                           " (last loss terms: " + format_terms(terms) + ")");
    }

    const Evaluation ev = evaluate_full(params, ctx, config);
    const std::vector<int> pred = argmax_rows(ev.logits);
    HistoryRow row;
    row.epoch = epoch;
    row.train_loss = epoch_loss;
    row.orth_residual = ev.orth;
    if (has_val) {
      const Metrics vm = compute_metrics(pred, g.labels(), masks.val, g.num_classes());
      row.val_acc = vm.accuracy;
      row.val_wf1 = vm.weighted_f1;
    }
    run.history.push_back(row);

    if (!has_val || row.val_wf1 > best_wf1) {
      best_wf1 = row.val_wf1;
      best = params;
      run.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }

  run.params = std::move(best);
  const std::vector<int> pred = argmax_rows(predict_logits(run.params, ctx, config));
  run.train = metrics_or_empty(pred, g, masks.train);
  run.val = metrics_or_empty(pred, g, masks.val);
  run.test = metrics_or_empty(pred, g, masks.test);
  return run;
}

LinkRun train_link_reconstruction(const TrainConfig& config, const Graph& g) {
  validate_config(config);
  if (config.num_experts < 1) throw ConfigError("num_experts must be >= 1");
  if (g.num_edges() == 0) throw ContractError("train_link_reconstruction: graph has no edges");
  TrainConfig cfg = config;
  cfg.variant = Variant::rmoe;
  const GraphContext ctx = make_context(g, cfg);
  Rng rng(cfg.seed);
  ModelParams params;
  add_expert_params(params, rng, cfg, g.num_features());
  OptimState state = make_optim_state(params, AdamHyper{cfg.lr});
  const bool riemannian = cfg.optimizer == "radam";

  auto record = [&](Tape& tape, std::uint64_t seed, double* link_value) {
    const BoundParams bound(tape, params);
    const Var x = tape.constant(g.features());
    const ExpertForward ef = expert_forward(bound, ctx, cfg, x);
    const Var link = link_term(ctx, cfg, ef.gate, ef.embeddings, ef.kappas, seed);
    *link_value = link.value().scalar();
    Var loss = link;
    if (cfg.gamma_reg != 0.0) loss = ad::add(loss, ad::scale(ad::expert_regularizer(ef.experts), cfg.gamma_reg));
    if (cfg.gamma_ent != 0.0) loss = ad::add(loss, ad::scale(ad::gating_entropy(ef.gate), cfg.gamma_ent));
    return loss;
  };

  LinkRun run;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Tape tape;
    double link_value = 0.0;
    const Var loss = record(tape, epoch_seed(cfg.seed, 4, epoch), &link_value);
    run.loss_history.push_back(link_value);
    const Gradients grads = tape.backward(loss);
    optimizer_step(state, params, grads, riemannian);
  }
  Tape tape;
  record(tape, epoch_seed(cfg.seed, 5, 0), &run.final_loss);
  run.params = std::move(params);
  return run;
}

std::string history_csv(const std::vector<HistoryRow>& history) {
  std::string out = "epoch,train_loss,val_acc,val_wf1,orth_residual\n";
  char buf[160];
  for (const HistoryRow& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_acc,
                  r.val_wf1, r.orth_residual);
    out += buf;
  }
  return out;
}

std::string serialize_params(const ModelParams& params) {
  json entries = json::object();
  for (const auto& [name, p] : params) {
    json e{{"shape", {p.value.rows(), p.value.cols()}}, {"data", p.value.storage()}};
    e["kappa"] = p.kind == ParamKind::stereographic ? json(p.kappa) : json(nullptr);
    entries[name] = std::move(e);
  }
  return json{{"format_version", 1}, {"params", entries}}.dump();
}

ModelParams deserialize_params(const std::string& text) {
  try {
    const json doc = json::parse(text);
    if (doc.at("format_version").get<int>() != 1) throw LoadError("weights: unsupported format_version");
    ModelParams params;
    for (const auto& [name, e] : doc.at("params").items()) {
      const auto shape = e.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw LoadError("weights: '" + name + "' shape must have two entries");
      auto data = e.at("data").get<std::vector<double>>();
      if (data.size() != shape[0] * shape[1]) {
        throw LoadError("weights: '" + name + "' data length does not match its shape");
      }
      Matrix value(shape[0], shape[1], std::move(data));
      if (e.at("kappa").is_null()) {
        params.add(name, std::move(value));
      } else {
        params.add(name, std::move(value), ParamKind::stereographic, e.at("kappa").get<double>());
      }
    }
    return params;
  } catch (const json::exception& e) {
    throw LoadError(std::string("weights: ") + e.what());
  }
}

}  // namespace geoformer
