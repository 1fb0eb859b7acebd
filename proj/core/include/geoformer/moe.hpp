#pragma once

// Riemannian mixture-of-experts front end: curvature-tagged graph encoders,
// topology-driven gating, aligned pairwise distances and the auxiliary loss
// terms that train them.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "geoformer/autodiff.hpp"
#include "geoformer/graph.hpp"
#include "geoformer/manifolds.hpp"

namespace geoformer {

inline constexpr std::size_t kDescriptorDim = 4;

/// [ln(1+deg), clustering coefficient, ln(1+mean neighbor degree),
///  |2-hop set| / (1 + |1-hop set|)].
std::array<double, kDescriptorDim> topology_descriptor(const Graph& g, std::size_t v);

/// BFS ball of radius `hops` around v. Larger balls keep v plus a seeded
/// uniform sample of cap-1 other members. Result is sorted.
std::vector<std::size_t> sample_local_subgraph(const Graph& g, std::size_t v, std::size_t hops,
                                               std::size_t cap, std::uint64_t seed);

/// Descriptor of every node computed on its sampled ball (N x 4).
Matrix compute_descriptors(const Graph& g, std::size_t hops, std::size_t cap, std::uint64_t seed);

struct ExpertConfig {
  std::size_t expert_id = 0;
  Curvature kappa;
  Matrix weights;  // d x d_e
  Matrix bias;     // 1 x d_e point of the expert's space
};

/// Tape handles of one expert's trainable state.
struct ExpertVars {
  Curvature kappa;
  Var weights;
  Var bias;
};

/// Largest tangent norm an expert encoder emits before exp0.
double tangent_cap(Curvature k);

namespace ad {

/// softmax_rows(D·θ).
Var gating_forward(const Var& descriptors, const Var& theta);

/// b ⊕_κ exp0(κ, clip(tanh(Â X W))) for every node (N x d_e).
Var expert_embed(const ExpertVars& e, const NormalizedAdjacency& adj, const Var& x);

/// Σ_e W[:,e] · log0(κ_e, Z_e).
Var fuse_tangent(const Var& gate, std::span<const Var> embeddings, std::span<const Curvature> kappas);

/// Normalized geometric mean of the gate rows of u[i] and v[i] (P x K).
Var aligned_pair_weights(const Var& gate, std::span<const std::size_t> u, std::span<const std::size_t> v);

/// Σ_e w_(u,v),e · d_κe(z_u, z_v)² for every pair (P x 1).
Var pair_distance_sq(const Var& gate, std::span<const Var> embeddings,
                     std::span<const Curvature> kappas, std::span<const std::size_t> u,
                     std::span<const std::size_t> v);

/// Mean row entropy −Σ W ln(W + 1e-12).
Var gating_entropy(const Var& gate);

/// Σ_e ‖W_e‖²_F + ‖log0(κ_e, b_e)‖².
Var expert_regularizer(std::span<const ExpertVars> experts);

/// Mean binary cross-entropy of the Fermi-Dirac decoder
/// p = 1 / (1 + exp((d² − r) / t)) over labelled pairs.
Var link_reconstruction_loss(const Var& pair_dist_sq, std::span<const std::uint8_t> is_edge,
                             double r = 2.0, double t = 1.0);

}  // namespace ad

struct LinkPairs {
  std::vector<std::size_t> u;
  std::vector<std::size_t> v;
  std::vector<std::uint8_t> is_edge;
};

/// Every edge once plus neg_ratio seeded non-edges per edge.
LinkPairs sample_link_pairs(const Graph& g, std::size_t neg_ratio, std::uint64_t seed);

// Matrix-level entry points.
Matrix gating_forward(const Matrix& descriptors, const Matrix& theta);
Matrix expert_embed(const ExpertConfig& e, const NormalizedAdjacency& adj, const Matrix& x);
Matrix fuse_tangent(const Matrix& gate, std::span<const Matrix> embeddings,
                    std::span<const Curvature> kappas);
std::vector<double> aligned_pair_weights(const Matrix& gate, std::size_t u, std::size_t v);
double pair_distance_sq(std::size_t u, std::size_t v, const Matrix& gate,
                        std::span<const Matrix> embeddings, std::span<const Curvature> kappas);
double gating_entropy(const Matrix& gate);
double expert_regularizer(std::span<const ExpertConfig> experts);
double link_reconstruction_loss(const Graph& g, const Matrix& gate, std::span<const Matrix> embeddings,
                                std::span<const Curvature> kappas, std::size_t neg_ratio,
                                std::uint64_t seed);

}  // namespace geoformer
