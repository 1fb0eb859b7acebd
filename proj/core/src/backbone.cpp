#include "geoformer/backbone.hpp"

#include <string>

#include "geoformer/error.hpp"
#include "geoformer/manifolds.hpp"

namespace geoformer {

Variant parse_variant(const std::string& name) {
  if (name == "base") return Variant::base;
  if (name == "stiefel") return Variant::stiefel;
  if (name == "grassmann") return Variant::grassmann;
  if (name == "rmoe") return Variant::rmoe;
  throw ConfigError("unknown variant '" + name + "' (expected base|stiefel|grassmann|rmoe)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::base:
      return "base";
    case Variant::stiefel:
      return "stiefel";
    case Variant::grassmann:
      return "grassmann";
    case Variant::rmoe:
      return "rmoe";
  }
  return "unknown";
}

namespace ad {

Var gcn_forward(const NormalizedAdjacency& adj, const Var& h, std::span<const Var> weights) {
  if (weights.empty()) throw ContractError("gcn_forward: at least one layer required");
  Var x = h;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    // Â(HW) costs less than (ÂH)W whenever the layer narrows.
    x = spmm(adj.matrix, matmul(x, weights[l]));
    if (l + 1 < weights.size()) x = relu(x);
  }
  return x;
}

namespace {

Var project(Variant variant, const Var& m, ProjectionGrad grad) {
  if (m.rows() < m.cols()) {
    throw DimensionError("qk_transform: batch of " + std::to_string(m.rows()) +
                         " nodes is smaller than the head width " + std::to_string(m.cols()));
  }
  if (variant == Variant::stiefel) {
    QrResult qr = qr_decompose(m.value());
    for (std::size_t j = 0; j < qr.r.rows(); ++j) {
      if (std::abs(qr.r(j, j)) < 1e-12) throw RankError("qk_transform: rank-deficient input");
    }
    if (grad == ProjectionGrad::straight_through) return straight_through(m, qr.q);
    Matrix q = qr.q;
    return m.tape().push(std::move(q), {m},
                         [m, qr = std::move(qr)](Tape& tape, const Matrix& g) {
                           tape.accumulate(m, qr_q_backward(qr, g));
                         },
                         "stiefel_project");
  }
  SvdResult svd = thin_svd(m.value());
  if (svd.sigma.back() < 1e-12) throw RankError("qk_transform: rank-deficient input");
  if (grad == ProjectionGrad::straight_through) return straight_through(m, svd.u);
  Matrix u = svd.u;
  return m.tape().push(std::move(u), {m},
                       [m, svd = std::move(svd)](Tape& tape, const Matrix& g) {
                         tape.accumulate(m, svd_u_backward(svd, g));
                       },
                       "grassmann_project");
}

}  // namespace

std::pair<Var, Var> qk_transform(Variant variant, const Var& q, const Var& k, ProjectionGrad grad) {
  if (variant == Variant::base || variant == Variant::rmoe) return {q, k};
  return {project(variant, q, grad), project(variant, k, grad)};
}

Var linear_attention(const Var& q, const Var& k, const Var& v, double beta) {
  require_same_shape(q.value(), k.value(), "linear_attention q/k");
  if (v.rows() != q.rows()) throw DimensionError("linear_attention: v must have one row per query");
  if (beta < 0.0 || beta > 1.0) throw ContractError("linear_attention: beta outside [0, 1]");
  const std::size_t n = q.rows();
  const Var qn = row_normalize(q);
  const Var kn = row_normalize(k);
  const Var kv = matmul(transpose(kn), v);                      // d x d_v
  const Var num = add(broadcast_rows(col_sum(v), n), matmul(qn, kv));
  const Var den = add_scalar(matmul(qn, transpose(col_sum(kn))), static_cast<double>(n));
  const Var attn = scale_rows(num, map(den, [](double x) { return std::pair{1.0 / x, -1.0 / (x * x)}; },
                                       "reciprocal"));
  if (beta == 0.0) return attn;
  return add(scale(v, beta), scale(attn, 1.0 - beta));
}

Var ensemble_combine(const Var& z_gnn, const Var& z_attn, double alpha) {
  require_same_shape(z_gnn.value(), z_attn.value(), "ensemble_combine");
  if (alpha < 0.0 || alpha > 1.0) throw ContractError("ensemble_combine: alpha outside [0, 1]");
  return add(scale(z_gnn, alpha), scale(z_attn, 1.0 - alpha));
}

}  // namespace ad

Matrix gcn_forward(const NormalizedAdjacency& adj, const Matrix& h, std::span<const Matrix> weights) {
  Tape tape;
  std::vector<Var> w;
  for (const Matrix& m : weights) w.push_back(tape.constant(m));
  return ad::gcn_forward(adj, tape.constant(h), w).value();
}

std::pair<Matrix, Matrix> qk_transform(Variant variant, const Matrix& q, const Matrix& k) {
  Tape tape;
  auto [a, b] = ad::qk_transform(variant, tape.constant(q), tape.constant(k));
  return {a.value(), b.value()};
}

Matrix linear_attention(const AttentionInputs& inp) {
  Tape tape;
  return ad::linear_attention(tape.constant(inp.q), tape.constant(inp.k), tape.constant(inp.v),
                              inp.beta)
      .value();
}

Matrix ensemble_combine(const Matrix& z_gnn, const Matrix& z_attn, double alpha) {
  Tape tape;
  return ad::ensemble_combine(tape.constant(z_gnn), tape.constant(z_attn), alpha).value();
}

}  // namespace geoformer
