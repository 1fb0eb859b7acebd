#include "geoformer/moe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <unordered_map>

#include "geoformer/error.hpp"
#include "geoformer/random.hpp"

namespace geoformer {

namespace {

// Descriptor over any adjacency exposed as `neighbors(i)` returning a sorted range.
template <typename Neighbors>
std::array<double, kDescriptorDim> descriptor_of(std::size_t v, Neighbors&& neighbors) {
  const auto nb = neighbors(v);
  const std::size_t deg = nb.size();
  std::array<double, kDescriptorDim> out{0.0, 0.0, 0.0, 0.0};
  if (deg == 0) return out;

  out[0] = std::log1p(static_cast<double>(deg));

  if (deg >= 2) {
    std::size_t closed = 0;
    for (std::size_t i = 0; i < deg; ++i) {
      const auto ni = neighbors(nb[i]);
      for (std::size_t j = i + 1; j < deg; ++j) {
        if (std::binary_search(ni.begin(), ni.end(), nb[j])) ++closed;
      }
    }
    out[1] = static_cast<double>(closed) / (static_cast<double>(deg * (deg - 1)) / 2.0);
  }

  double degree_sum = 0.0;
  std::vector<std::size_t> two_hop;
  for (std::size_t w : nb) {
    const auto nw = neighbors(w);
    degree_sum += static_cast<double>(nw.size());
    for (std::size_t x : nw) {
      if (x != v && !std::binary_search(nb.begin(), nb.end(), x)) two_hop.push_back(x);
    }
  }
  std::sort(two_hop.begin(), two_hop.end());
  two_hop.erase(std::unique(two_hop.begin(), two_hop.end()), two_hop.end());
  out[2] = std::log1p(degree_sum / static_cast<double>(deg));
  out[3] = static_cast<double>(two_hop.size()) / (1.0 + static_cast<double>(deg));
  return out;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t v) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (v + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Var reciprocal(const Var& a) {
  return ad::map(a, [](double x) { return std::pair{1.0 / x, -1.0 / (x * x)}; }, "reciprocal");
}

// Scales every row whose norm exceeds `limit` back onto the sphere of that radius.
Var clip_row_norms(const Var& x, double limit) {
  if (!std::isfinite(limit)) return x;
  const Var s = ad::row_dot(x, x);
  const Var factor = ad::map(
      s,
      [limit](double v) {
        const double r = std::sqrt(v);
        if (r <= limit) return std::pair{1.0, 0.0};
        return std::pair{limit / r, -0.5 * limit / (r * v)};
      },
      "clip_norm");
  return ad::scale_rows(x, factor);
}

}  // namespace

std::array<double, kDescriptorDim> topology_descriptor(const Graph& g, std::size_t v) {
  if (v >= g.num_nodes()) throw ContractError("topology_descriptor: node out of range");
  return descriptor_of(v, [&g](std::size_t u) { return g.neighbors(u); });
}

std::vector<std::size_t> sample_local_subgraph(const Graph& g, std::size_t v, std::size_t hops,
                                               std::size_t cap, std::uint64_t seed) {
  if (v >= g.num_nodes()) throw ContractError("sample_local_subgraph: node out of range");
  if (cap == 0) throw ContractError("sample_local_subgraph: cap must be >= 1");
  std::vector<std::size_t> ball{v};
  std::unordered_map<std::size_t, std::size_t> depth{{v, 0}};
  for (std::size_t head = 0; head < ball.size(); ++head) {
    const std::size_t u = ball[head];
    const std::size_t du = depth[u];
    if (du == hops) continue;
    for (std::size_t w : g.neighbors(u)) {
      if (depth.emplace(w, du + 1).second) ball.push_back(w);
    }
  }
  if (ball.size() > cap) {
    Rng rng(mix(seed, v));
    // Partial Fisher-Yates over the members other than v.
    for (std::size_t i = 1; i < cap; ++i) {
      const std::size_t j = i + rng.index(ball.size() - i);
      std::swap(ball[i], ball[j]);
    }
    ball.resize(cap);
  }
  std::sort(ball.begin(), ball.end());
  return ball;
}

Matrix compute_descriptors(const Graph& g, std::size_t hops, std::size_t cap, std::uint64_t seed) {
  const std::size_t n = g.num_nodes();
  Matrix d(n, kDescriptorDim);
  std::vector<std::vector<std::size_t>> local_adj;
  for (std::size_t v = 0; v < n; ++v) {
    const std::vector<std::size_t> ball = sample_local_subgraph(g, v, hops, cap, seed);
    // Induced topology of the ball in local indices (ball is sorted).
    local_adj.assign(ball.size(), {});
    for (std::size_t i = 0; i < ball.size(); ++i) {
      for (std::size_t w : g.neighbors(ball[i])) {
        auto it = std::lower_bound(ball.begin(), ball.end(), w);
        if (it != ball.end() && *it == w) {
          local_adj[i].push_back(static_cast<std::size_t>(it - ball.begin()));
        }
      }
    }
    const std::size_t local_v =
        static_cast<std::size_t>(std::lower_bound(ball.begin(), ball.end(), v) - ball.begin());
    const auto desc = descriptor_of(local_v, [&local_adj](std::size_t u) {
      return std::span<const std::size_t>(local_adj[u]);
    });
    std::copy(desc.begin(), desc.end(), d.row(v).begin());
  }
  return d;
}

double tangent_cap(Curvature k) {
  if (k.hyperbolic()) return 0.85 / std::sqrt(-k.kappa);
  if (k.spherical()) return 0.45 * std::numbers::pi / std::sqrt(k.kappa);
  return std::numeric_limits<double>::infinity();
}

namespace ad {

Var gating_forward(const Var& descriptors, const Var& theta) {
  return softmax_rows(matmul(descriptors, theta));
}

Var expert_embed(const ExpertVars& e, const NormalizedAdjacency& adj, const Var& x) {
  if (e.bias.rows() != 1 || e.bias.cols() != e.weights.cols()) {
    throw DimensionError("expert_embed: bias must be 1 x d_e");
  }
  const Var h = tanh(spmm(adj.matrix, matmul(x, e.weights)));
  const Var tangent = clip_row_norms(h, tangent_cap(e.kappa));
  const Var points = exp0_rows(e.kappa, tangent);
  const Var shifted = mobius_add_rows(e.kappa, broadcast_rows(e.bias, points.rows()), points);
  if (!e.kappa.hyperbolic()) return shifted;
  return clip_row_norms(shifted, domain_radius(e.kappa) * (1.0 - kDomainMargin));
}

Var fuse_tangent(const Var& gate, std::span<const Var> embeddings, std::span<const Curvature> kappas) {
  if (embeddings.empty() || embeddings.size() != kappas.size() || gate.cols() != embeddings.size()) {
    throw DimensionError("fuse_tangent: need one embedding and curvature per gate column");
  }
  Var out;
  for (std::size_t e = 0; e < embeddings.size(); ++e) {
    const Var term = scale_rows(log0_rows(kappas[e], embeddings[e]), slice_cols(gate, e, 1));
    out = e == 0 ? term : add(out, term);
  }
  return out;
}

Var aligned_pair_weights(const Var& gate, std::span<const std::size_t> u,
                         std::span<const std::size_t> v) {
  const Var gu = gather_rows(gate, u);
  const Var gv = gather_rows(gate, v);
  const Var root = sqrt(hadamard(gu, gv));
  return scale_rows(root, reciprocal(row_sum(root)));
}

Var pair_distance_sq(const Var& gate, std::span<const Var> embeddings,
                     std::span<const Curvature> kappas, std::span<const std::size_t> u,
                     std::span<const std::size_t> v) {
  if (u.size() != v.size()) throw DimensionError("pair_distance_sq: u and v lengths differ");
  if (embeddings.size() != kappas.size() || gate.cols() != embeddings.size()) {
    throw DimensionError("pair_distance_sq: need one embedding and curvature per gate column");
  }
  const Var w = aligned_pair_weights(gate, u, v);
  Var total;
  for (std::size_t e = 0; e < embeddings.size(); ++e) {
    const Var d = dist_sq_rows(kappas[e], gather_rows(embeddings[e], u), gather_rows(embeddings[e], v));
    const Var term = hadamard(slice_cols(w, e, 1), d);
    total = e == 0 ? term : add(total, term);
  }
  return total;
}

Var gating_entropy(const Var& gate) {
  const Var plogp = hadamard(gate, log(add_scalar(gate, 1e-12)));
  return scale(sum(plogp), -1.0 / static_cast<double>(gate.rows()));
}

Var expert_regularizer(std::span<const ExpertVars> experts) {
  if (experts.empty()) throw ContractError("expert_regularizer: no experts");
  Var total;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    const Var term = add(frobenius_sq(experts[i].weights),
                         frobenius_sq(log0_rows(experts[i].kappa, experts[i].bias)));
    total = i == 0 ? term : add(total, term);
  }
  return total;
}

Var link_reconstruction_loss(const Var& pair_dist_sq, std::span<const std::uint8_t> is_edge,
                             double r, double t) {
  if (pair_dist_sq.cols() != 1 || pair_dist_sq.rows() != is_edge.size()) {
    throw DimensionError("link_reconstruction_loss: one distance per labelled pair required");
  }
  if (is_edge.empty()) throw ContractError("link_reconstruction_loss: no pairs");
  Matrix sign(is_edge.size(), 1);
  for (std::size_t i = 0; i < is_edge.size(); ++i) sign(i, 0) = is_edge[i] ? 1.0 : -1.0;
  Tape& tape = pair_dist_sq.tape();
  const Var logits = add_scalar(scale(pair_dist_sq, 1.0 / t), -r / t);
  const Var per_pair = softplus(hadamard(logits, tape.constant(std::move(sign))));
  return scale(sum(per_pair), 1.0 / static_cast<double>(is_edge.size()));
}

}  // namespace ad

LinkPairs sample_link_pairs(const Graph& g, std::size_t neg_ratio, std::uint64_t seed) {
  if (neg_ratio < 1) throw ContractError("sample_link_pairs: neg_ratio must be >= 1");
  LinkPairs pairs;
  for (auto [u, v] : g.edge_list()) {
    pairs.u.push_back(u);
    pairs.v.push_back(v);
    pairs.is_edge.push_back(1);
  }
  const std::size_t n = g.num_nodes();
  const std::size_t wanted = pairs.u.size() * neg_ratio;
  const std::size_t max_attempts = 100 * wanted + 100;
  Rng rng(seed);
  std::size_t found = 0;
  for (std::size_t attempt = 0; attempt < max_attempts && found < wanted && n >= 2; ++attempt) {
    const std::size_t a = rng.index(n);
    const std::size_t b = rng.index(n);
    if (a == b || g.has_edge(a, b)) continue;
    pairs.u.push_back(a);
    pairs.v.push_back(b);
    pairs.is_edge.push_back(0);
    ++found;
  }
  return pairs;
}

Matrix gating_forward(const Matrix& descriptors, const Matrix& theta) {
  Tape tape;
  return ad::gating_forward(tape.constant(descriptors), tape.constant(theta)).value();
}

Matrix expert_embed(const ExpertConfig& e, const NormalizedAdjacency& adj, const Matrix& x) {
  Tape tape;
  const ExpertVars vars{e.kappa, tape.constant(e.weights), tape.constant(e.bias)};
  return ad::expert_embed(vars, adj, tape.constant(x)).value();
}

Matrix fuse_tangent(const Matrix& gate, std::span<const Matrix> embeddings,
                    std::span<const Curvature> kappas) {
  Tape tape;
  std::vector<Var> emb;
  for (const Matrix& m : embeddings) emb.push_back(tape.constant(m));
  return ad::fuse_tangent(tape.constant(gate), emb, kappas).value();
}

std::vector<double> aligned_pair_weights(const Matrix& gate, std::size_t u, std::size_t v) {
  Tape tape;
  const std::size_t us[] = {u};
  const std::size_t vs[] = {v};
  const Matrix w = ad::aligned_pair_weights(tape.constant(gate), us, vs).value();
  return {w.row(0).begin(), w.row(0).end()};
}

double pair_distance_sq(std::size_t u, std::size_t v, const Matrix& gate,
                        std::span<const Matrix> embeddings, std::span<const Curvature> kappas) {
  Tape tape;
  std::vector<Var> emb;
  for (const Matrix& m : embeddings) emb.push_back(tape.constant(m));
  const std::size_t us[] = {u};
  const std::size_t vs[] = {v};
  return ad::pair_distance_sq(tape.constant(gate), emb, kappas, us, vs).value()(0, 0);
}

double gating_entropy(const Matrix& gate) {
  Tape tape;
  return ad::gating_entropy(tape.constant(gate)).value().scalar();
}

double expert_regularizer(std::span<const ExpertConfig> experts) {
  Tape tape;
  std::vector<ExpertVars> vars;
  for (const auto& e : experts) {
    vars.push_back({e.kappa, tape.constant(e.weights), tape.constant(e.bias)});
  }
  return ad::expert_regularizer(vars).value().scalar();
}

double link_reconstruction_loss(const Graph& g, const Matrix& gate, std::span<const Matrix> embeddings,
                                std::span<const Curvature> kappas, std::size_t neg_ratio,
                                std::uint64_t seed) {
  const LinkPairs pairs = sample_link_pairs(g, neg_ratio, seed);
  Tape tape;
  std::vector<Var> emb;
  for (const Matrix& m : embeddings) emb.push_back(tape.constant(m));
  const Var d2 = ad::pair_distance_sq(tape.constant(gate), emb, kappas, pairs.u, pairs.v);
  return ad::link_reconstruction_loss(d2, pairs.is_edge).value().scalar();
}

}  // namespace geoformer
