#pragma once

// Building blocks of the SGFormer-style backbone: GCN branch, single-layer
// linear attention, manifold transforms of queries/keys, and the weighted
// combination of the two branches.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "geoformer/autodiff.hpp"
#include "geoformer/graph.hpp"
#include "geoformer/matrix.hpp"

namespace geoformer {

enum class Variant { base, stiefel, grassmann, rmoe };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);

struct AttentionInputs {
  Matrix q;
  Matrix k;
  Matrix v;
  double beta = 0.5;
};

/// How gradients cross the QR / SVD projections of qk_transform.
enum class ProjectionGrad {
  /// Backward treats the projection as the identity map.
  straight_through,
  /// Exact adjoint of the factorization.
  exact,
};

namespace ad {

/// ReLU(Â H W) for every layer except the last, which stays linear.
Var gcn_forward(const NormalizedAdjacency& adj, const Var& h, std::span<const Var> weights);

std::pair<Var, Var> qk_transform(Variant variant, const Var& q, const Var& k,
                                 ProjectionGrad grad = ProjectionGrad::straight_through);

/// β·v + (1−β)·attn with the "1 + cosine" kernel, evaluated in O(N·d²):
/// attn_i = (Σ_j v_j + q̂_i K̂ᵀV) / (N + q̂_i Σ_j k̂_j).
Var linear_attention(const Var& q, const Var& k, const Var& v, double beta);

/// α·z_gnn + (1−α)·z_attn.
Var ensemble_combine(const Var& z_gnn, const Var& z_attn, double alpha);

}  // namespace ad

Matrix gcn_forward(const NormalizedAdjacency& adj, const Matrix& h, std::span<const Matrix> weights);
std::pair<Matrix, Matrix> qk_transform(Variant variant, const Matrix& q, const Matrix& k);
Matrix linear_attention(const AttentionInputs& inp);
Matrix ensemble_combine(const Matrix& z_gnn, const Matrix& z_attn, double alpha);

}  // namespace geoformer
