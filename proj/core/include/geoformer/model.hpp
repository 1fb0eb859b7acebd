#pragma once

// The four model variants, their composite loss, and the training and
// evaluation loops.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geoformer/autodiff.hpp"
#include "geoformer/backbone.hpp"
#include "geoformer/graph.hpp"
#include "geoformer/manifolds.hpp"
#include "geoformer/moe.hpp"
#include "geoformer/params.hpp"

namespace geoformer {

struct TrainConfig {
  Variant variant = Variant::base;
  std::size_t hidden_dim = 64;
  std::size_t gcn_depth = 2;
  double lr = 0.01;
  std::size_t epochs = 300;
  double alpha = 0.5;
  double beta_attn = 0.5;
  double lambda_orth = 0.01;
  std::size_t num_experts = 3;
  std::vector<double> curvatures{-1.0, 0.0, 1.0};
  std::size_t expert_dim = 16;
  double gamma_ent = 0.001;
  double gamma_reg = 1e-4;
  double gamma_link = 0.0;
  std::size_t link_neg_ratio = 1;
  std::size_t descriptor_hops = 2;
  std::size_t descriptor_cap = 64;
  std::size_t batches = 0;
  /// "radam" (Riemannian Adam for manifold parameters) or "adam".
  std::string optimizer = "radam";
  std::uint64_t seed = 0;
  std::size_t patience = 100;
  double dropout = 0.0;
  double weight_decay = 0.0;
  ProjectionGrad projection_grad = ProjectionGrad::straight_through;
};

/// Throws ConfigError naming the first violated constraint.
void validate_config(const TrainConfig& config);

/// Curvature of expert e: curvatures[e mod |curvatures|].
Curvature expert_curvature(const TrainConfig& config, std::size_t e);

std::string expert_weight_name(std::size_t e);
std::string expert_bias_name(std::size_t e);

/// Glorot-uniform weights, manifold biases at the origin, zero gating.
ModelParams init_params(const TrainConfig& config, std::size_t num_features, std::size_t num_classes);

/// Graph-derived constants shared by every forward pass on one graph.
struct GraphContext {
  const Graph* graph = nullptr;
  NormalizedAdjacency adj;
  /// Topology descriptors (N x 4); empty unless the variant is rmoe.
  Matrix descriptors;
};

GraphContext make_context(const Graph& g, const TrainConfig& config);

struct ForwardAux {
  Var y;
  Var gate;
  std::vector<Var> embeddings;
  std::vector<Curvature> kappas;
  std::vector<ExpertVars> experts;
};

struct ForwardResult {
  Var logits;
  ForwardAux aux;
};

namespace ad {

/// f_v = xw_v + Σ_e a_{v,e} (t_{v,e} W_Vc), where xw = X W_in, t_{v,e} = log0(κ_e, z_v^e) and
/// a_v = softmax_e(q_v·(t_{v,e} W_Kc)/√d_h + ln(W[v,e] + 1e-12)), q_v = x_v W_Qc.
Var cross_attention_fuse(const Var& x, const Var& xw, const Var& gate,
                         std::span<const Var> embeddings, std::span<const Curvature> kappas,
                         const Var& w_qc, const Var& w_kc, const Var& w_vc);

}  // namespace ad

/// Records the forward pass on `tape`. `dropout_seed` enables dropout on the
/// projected input when config.dropout > 0.
ForwardResult forward(const BoundParams& params, const GraphContext& ctx, const TrainConfig& config,
                      std::optional<std::uint64_t> dropout_seed = std::nullopt);

struct LossTerms {
  double cross_entropy = 0.0;
  double orthogonality = 0.0;
  double entropy = 0.0;
  double regularizer = 0.0;
  double link = 0.0;
};

/// CE over `rows` + λ·orth(Y) + γ_ent·entropy + γ_reg·regularizer + γ_link·link.
/// The orthogonality term applies to the stiefel and grassmann variants, the
/// mixture terms to rmoe.
Var composite_loss(const Var& logits, std::span<const int> labels, std::span<const std::size_t> rows,
                   const ForwardAux& aux, const GraphContext& ctx, const TrainConfig& config,
                   std::uint64_t link_seed, LossTerms* terms = nullptr);

/// Logits of a parameter snapshot on the whole graph.
Matrix predict_logits(const ModelParams& params, const GraphContext& ctx, const TrainConfig& config);

/// ‖YᵀY − I‖_F of the combined representation.
double orth_residual(const ModelParams& params, const GraphContext& ctx, const TrainConfig& config);

std::vector<int> argmax_rows(const Matrix& logits);

Metrics evaluate(const ModelParams& params, const GraphContext& ctx, const TrainConfig& config,
                 std::span<const std::uint8_t> mask);

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double val_wf1 = 0.0;
  double orth_residual = 0.0;
};

struct RunArtifacts {
  Metrics train;
  Metrics val;
  Metrics test;
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;
  ModelParams params;
};

/// Full training run. `initial` replaces the seeded initialization.
RunArtifacts train(const TrainConfig& config, const Graph& g, const SplitMasks& masks,
                   const ModelParams* initial = nullptr);

struct LinkRun {
  std::vector<double> loss_history;
  double final_loss = 0.0;
  ModelParams params;
};

/// Trains only the expert encoders and the gating on link reconstruction.
/// The final loss is evaluated on every edge plus a fixed negative sample.
LinkRun train_link_reconstruction(const TrainConfig& config, const Graph& g);

std::string history_csv(const std::vector<HistoryRow>& history);

/// {"format_version":1,"params":{name:{"shape":[r,c],"kappa":κ|null,"data":[...]}}}
std::string serialize_params(const ModelParams& params);
ModelParams deserialize_params(const std::string& text);

}  // namespace geoformer
