#include "geoformer/optim.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "geoformer/error.hpp"
#include "geoformer/manifolds.hpp"
#include "geoformer/moe.hpp"

namespace geoformer {

namespace {

using json = nlohmann::json;

Moments& moments_for(OptimState& state, const std::string& name, const Matrix& value) {
  auto it = state.moments.find(name);
  if (it == state.moments.end()) {
    it = state.moments.emplace(name, Moments{Matrix(value.rows(), value.cols()),
                                             Matrix(value.rows(), value.cols())})
             .first;
  }
  if (!it->second.m.same_shape(value)) {
    throw ContractError("optimizer: state shape for '" + name + "' does not match the parameter");
  }
  return it->second;
}

const Matrix& grad_for(const Gradients& grads, const std::string& name, const Matrix& value) {
  auto it = grads.find(name);
  if (it == grads.end()) throw ContractError("optimizer: no gradient for '" + name + "'");
  if (!it->second.same_shape(value)) {
    throw ContractError("optimizer: gradient shape for '" + name + "' does not match the parameter");
  }
  return it->second;
}

// Updates the moments with `g` and returns the direction m̂ / (√û + ε).
Matrix adapt(const OptimState& state, Moments& mom, const Matrix& g) {
  const AdamHyper& h = state.hyper;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  Matrix dir(g.rows(), g.cols());
  auto m = mom.m.values();
  auto u = mom.u.values();
  auto gv = g.values();
  auto d = dir.values();
  for (std::size_t i = 0; i < gv.size(); ++i) {
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gv[i];
    u[i] = h.beta2 * u[i] + (1.0 - h.beta2) * gv[i] * gv[i];
    d[i] = (m[i] / c1) / (std::sqrt(u[i] / c2) + h.eps);
  }
  return dir;
}

void euclidean_update(OptimState& state, const std::string& name, Param& p, const Matrix& g) {
  const Matrix dir = adapt(state, moments_for(state, name, p.value), g);
  auto x = p.value.values();
  auto d = dir.values();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] -= state.hyper.lr * d[i];
  if (p.kind == ParamKind::stereographic) {
    const Curvature k(p.kappa);
    for (std::size_t r = 0; r < p.value.rows(); ++r) {
      const ManifoldPoint q = project_to_domain(k, p.value.row(r), kDomainMargin);
      std::copy(q.coords.begin(), q.coords.end(), p.value.row(r).begin());
    }
  }
}

void stereographic_update(OptimState& state, const std::string& name, Param& p, const Matrix& g) {
  const Curvature k(p.kappa);
  // Riemannian gradient: rescale each row by 1/λ_x².
  Matrix rg = g;
  for (std::size_t r = 0; r < p.value.rows(); ++r) {
    const double lam = conformal_factor(k, p.value.row(r));
    for (double& v : rg.row(r)) v /= lam * lam;
  }
  const Matrix dir = adapt(state, moments_for(state, name, p.value), rg);
  const double cap = tangent_cap(k);
  for (std::size_t r = 0; r < p.value.rows(); ++r) {
    const auto x = p.value.row(r);
    const double lam = conformal_factor(k, x);
    Vec v(dir.row(r).begin(), dir.row(r).end());
    double norm = 0.0;
    for (double& e : v) {
      e *= -state.hyper.lr * lam / 2.0;
      norm += e * e;
    }
    norm = std::sqrt(norm);
    if (norm > cap) {
      for (double& e : v) e *= cap / norm;
    }
    const ManifoldPoint moved = mobius_add(k, x, exp0(k, v).coords);
    const ManifoldPoint q = project_to_domain(k, moved.coords, kDomainMargin);
    std::copy(q.coords.begin(), q.coords.end(), x.begin());
  }
}

void stiefel_update(OptimState& state, const std::string& name, Param& p, const Matrix& g) {
  const Matrix xi = stiefel_tangent(p.value, g);
  const Matrix dir = adapt(state, moments_for(state, name, p.value), xi);
  p.value = stiefel_retract(StiefelMatrix::from_orthonormal(p.value), dir, state.hyper.lr).mat();
}

void check_hyper(const AdamHyper& h) {
  if (!(h.lr >= 0.0) || !std::isfinite(h.lr)) throw ContractError("optimizer: lr must be >= 0");
  if (!(h.beta1 >= 0.0 && h.beta1 < 1.0) || !(h.beta2 >= 0.0 && h.beta2 < 1.0)) {
    throw ContractError("optimizer: betas must lie in [0, 1)");
  }
  if (!(h.eps > 0.0)) throw ContractError("optimizer: eps must be positive");
}

enum class Which { euclidean, manifold, all_riemannian, all_euclidean };

void step(OptimState& state, ModelParams& params, const Gradients& grads, Which which) {
  check_hyper(state.hyper);
  ++state.t;
  for (auto& [name, p] : params) {
    const bool manifold = p.kind != ParamKind::euclidean;
    if (which == Which::euclidean && manifold) continue;
    if (which == Which::manifold && !manifold) continue;
    const Matrix& g = grad_for(grads, name, p.value);
    if (!manifold || which == Which::all_euclidean) {
      euclidean_update(state, name, p, g);
    } else if (p.kind == ParamKind::stereographic) {
      stereographic_update(state, name, p, g);
    } else {
      stiefel_update(state, name, p, g);
    }
  }
}

json matrix_to_json(const Matrix& m) {
  return json{{"shape", {m.rows(), m.cols()}}, {"data", m.storage()}};
}

Matrix matrix_from_json(const json& j) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 2) throw LoadError("optimizer state: shape must have two entries");
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != shape[0] * shape[1]) throw LoadError("optimizer state: data length mismatch");
  return Matrix(shape[0], shape[1], std::move(data));
}

}  // namespace

bool operator==(const OptimState& a, const OptimState& b) {
  return a.hyper.lr == b.hyper.lr && a.hyper.beta1 == b.hyper.beta1 &&
         a.hyper.beta2 == b.hyper.beta2 && a.hyper.eps == b.hyper.eps && a.t == b.t &&
         a.moments == b.moments;
}

OptimState make_optim_state(const ModelParams& params, AdamHyper hyper) {
  check_hyper(hyper);
  OptimState state;
  state.hyper = hyper;
  for (const auto& [name, p] : params) {
    state.moments.emplace(name, Moments{Matrix(p.value.rows(), p.value.cols()),
                                        Matrix(p.value.rows(), p.value.cols())});
  }
  return state;
}

void adam_step(OptimState& state, ModelParams& params, const Gradients& grads) {
  step(state, params, grads, Which::euclidean);
}

void riemannian_adam_step(OptimState& state, ModelParams& params, const Gradients& grads) {
  step(state, params, grads, Which::manifold);
}

void optimizer_step(OptimState& state, ModelParams& params, const Gradients& grads, bool riemannian) {
  step(state, params, grads, riemannian ? Which::all_riemannian : Which::all_euclidean);
}

std::string serialize_optim_state(const OptimState& state) {
  json moments = json::object();
  for (const auto& [name, mom] : state.moments) {
    moments[name] = {{"m", matrix_to_json(mom.m)}, {"u", matrix_to_json(mom.u)}};
  }
  const json doc{{"format_version", 1},
                 {"lr", state.hyper.lr},
                 {"beta1", state.hyper.beta1},
                 {"beta2", state.hyper.beta2},
                 {"eps", state.hyper.eps},
                 {"t", state.t},
                 {"moments", moments}};
  return doc.dump();
}

OptimState deserialize_optim_state(const std::string& text) {
  try {
    const json doc = json::parse(text);
    if (doc.at("format_version").get<int>() != 1) {
      throw LoadError("optimizer state: unsupported format_version");
    }
    OptimState state;
    state.hyper.lr = doc.at("lr").get<double>();
    state.hyper.beta1 = doc.at("beta1").get<double>();
    state.hyper.beta2 = doc.at("beta2").get<double>();
    state.hyper.eps = doc.at("eps").get<double>();
    state.t = doc.at("t").get<std::uint64_t>();
    for (const auto& [name, mom] : doc.at("moments").items()) {
      state.moments.emplace(name, Moments{matrix_from_json(mom.at("m")), matrix_from_json(mom.at("u"))});
    }
    return state;
  } catch (const json::exception& e) {
    throw LoadError(std::string("optimizer state: ") + e.what());
  }
}

}  // namespace geoformer
