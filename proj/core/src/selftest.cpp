#include "geoformer/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "geoformer/manifolds.hpp"
#include "geoformer/random.hpp"

namespace geoformer {

namespace {

using Clock = std::chrono::steady_clock;

Vec random_direction(Rng& rng, std::size_t dim) {
  Vec v(dim);
  double n = 0.0;
  while (n == 0.0) {
    n = 0.0;
    for (double& x : v) {
      x = rng.normal();
      n += x * x;
    }
  }
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

Vec random_ball_point(Rng& rng, std::size_t dim, double radius) {
  Vec v = random_direction(rng, dim);
  const double r = radius * rng.uniform();
  for (double& x : v) x *= r;
  return v;
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

CheckResult make_check(std::string name, double err, double tol) {
  return {std::move(name), err, tol, err < tol};
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

bool SuiteResult::passed() const { return first_failure() == nullptr; }

const CheckResult* SuiteResult::first_failure() const {
  for (const CheckResult& c : checks) {
    if (!c.passed) return &c;
  }
  return nullptr;
}

Matrix quadratic_attention(const AttentionInputs& inp) {
  const std::size_t n = inp.q.rows();
  auto normalized = [](std::span<const double> r) {
    double s = 0.0;
    for (double x : r) s += x * x;
    const double d = std::max(std::sqrt(s), 1e-12);
    Vec out(r.begin(), r.end());
    for (double& x : out) x /= d;
    return out;
  };
  Matrix out(n, inp.v.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const Vec qi = normalized(inp.q.row(i));
    double den = 0.0;
    Vec num(inp.v.cols(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const Vec kj = normalized(inp.k.row(j));
      double w = 1.0;
      for (std::size_t c = 0; c < qi.size(); ++c) w += qi[c] * kj[c];
      den += w;
      for (std::size_t c = 0; c < num.size(); ++c) num[c] += w * inp.v(j, c);
    }
    for (std::size_t c = 0; c < num.size(); ++c) {
      out(i, c) = inp.beta * inp.v(i, c) + (1.0 - inp.beta) * num[c] / den;
    }
  }
  return out;
}

SuiteResult run_geometry_suite(std::uint64_t seed) {
  const auto start = Clock::now();
  SuiteResult res;
  res.suite = "geometry";
  Rng rng(seed);
  constexpr std::size_t kDim = 3;

  for (double kv : {-3.0, -1.0, 1.0, 3.0}) {
    const Curvature k(kv);
    const double s = std::sqrt(std::abs(kv));
    // κ<0: tangents whose image stays within 0.9 of the ball radius.
    // κ>0: 0.9 of the chart limit π/(2√κ).
    const double limit = k.hyperbolic() ? std::atanh(0.9) / s : 0.9 * std::numbers::pi / (2.0 * s);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const Vec v = random_ball_point(rng, kDim, limit);
      const Vec back = log0(k, exp0(k, v).coords);
      for (std::size_t c = 0; c < kDim; ++c) worst = std::max(worst, std::abs(back[c] - v[c]));
    }
    char name[64];
    std::snprintf(name, sizeof name, "round trip kappa=%g", kv);
    res.checks.push_back(make_check(name, worst, 1e-9));
  }

  double flat = 0.0;
  for (double kv : {-1e-8, 1e-8}) {
    for (int i = 0; i < 200; ++i) {
      const Vec x = random_ball_point(rng, kDim, 0.5);
      const Vec y = random_ball_point(rng, kDim, 0.5);
      flat = std::max(flat, std::abs(dist(Curvature(kv), x, y) - dist(Curvature(0.0), x, y)));
    }
  }
  res.checks.push_back(make_check("flat limit |kappa|=1e-8", flat, 1e-5));

  const Vec half{0.5, 0.0};
  const ManifoldPoint m = mobius_add(Curvature(-1.0), half, half);
  res.checks.push_back(
      make_check("mobius (0.5,0)+(0.5,0)=(0.8,0)", std::max(std::abs(m.coords[0] - 0.8), std::abs(m.coords[1])),
                 1e-12));

  double sym = 0.0;
  double tri = 0.0;
  for (double kv : {-3.0, -1.0, 0.0, 1.0, 3.0}) {
    const Curvature k(kv);
    const double radius = kv == 0.0 ? 1.0 : 0.5 / std::sqrt(std::abs(kv));
    for (int i = 0; i < 200; ++i) {
      const Vec x = random_ball_point(rng, kDim, radius);
      const Vec y = random_ball_point(rng, kDim, radius);
      const Vec z = random_ball_point(rng, kDim, radius);
      const double dxy = dist(k, x, y);
      sym = std::max(sym, std::abs(dxy - dist(k, y, x)));
      tri = std::max(tri, dxy - dist(k, x, z) - dist(k, z, y));
    }
  }
  res.checks.push_back(make_check("distance symmetry", sym, 1e-9));
  res.checks.push_back(make_check("triangle inequality excess", std::max(tri, 0.0), 1e-9));
  res.seconds = seconds_since(start);
  return res;
}

SuiteResult run_projection_suite(std::uint64_t seed) {
  const auto start = Clock::now();
  SuiteResult res;
  res.suite = "projection";
  Rng rng(seed);
  double stiefel = 0.0;
  double grassmann = 0.0;
  double invariance = 0.0;
  double idempotence = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t k = 1 + rng.index(8);
    const std::size_t n = k + rng.index(13);
    const Matrix m = random_matrix(rng, n, k);
    const StiefelMatrix q = stiefel_project(m);
    stiefel = std::max(stiefel, orthonormality_residual(q.mat()));
    idempotence = std::max(idempotence, max_abs_diff(stiefel_project(q.mat()).mat(), q.mat()));
    const GrassmannRep u = grassmann_project(m);
    grassmann = std::max(grassmann, orthonormality_residual(u.basis.mat()));
    const Matrix rot = qr_decompose(random_matrix(rng, k, k)).q;
    const GrassmannRep u2 = grassmann_project(matmul(m, rot));
    invariance = std::max(invariance, frobenius_norm(sub(u.projector(), u2.projector())));
  }
  res.checks.push_back(make_check("stiefel orthonormality", stiefel, 1e-10));
  res.checks.push_back(make_check("grassmann orthonormality", grassmann, 1e-10));
  res.checks.push_back(make_check("grassmann projector invariance", invariance, 1e-9));
  res.checks.push_back(make_check("stiefel idempotence", idempotence, 1e-12));
  res.seconds = seconds_since(start);
  return res;
}

SuiteResult run_attention_suite(std::uint64_t seed, const AttentionKernel& kernel) {
  const auto start = Clock::now();
  SuiteResult res;
  res.suite = "attention";
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 1 + rng.index(64);
    const std::size_t d = 1 + rng.index(16);
    AttentionInputs inp{random_matrix(rng, n, d), random_matrix(rng, n, d), random_matrix(rng, n, d),
                        rng.uniform()};
    worst = std::max(worst, max_abs_diff(kernel(inp), quadratic_attention(inp)));
  }
  res.checks.push_back(make_check("linear≡quadratic", worst, 1e-10));
  res.seconds = seconds_since(start);
  return res;
}

GradcheckProblem make_gradcheck_problem(Variant variant, std::uint64_t seed) {
  SyntheticParams sp;
  sp.kind = SyntheticKind::sbm;
  sp.block_sizes = {15, 15};
  sp.p_in = 0.3;
  sp.p_out = 0.05;
  sp.feature_dim = 12;
  auto [g, masks] = generate_synthetic(sp, seed);

  TrainConfig cfg;
  cfg.variant = variant;
  cfg.hidden_dim = 8;
  cfg.expert_dim = 4;
  cfg.num_experts = 3;
  cfg.curvatures = {-1.0, 0.0, 1.0};
  cfg.lambda_orth = 0.01;
  cfg.gamma_ent = 0.01;
  cfg.gamma_reg = 0.01;
  cfg.gamma_link = variant == Variant::rmoe ? 0.1 : 0.0;
  cfg.seed = seed;
  cfg.projection_grad = ProjectionGrad::exact;

  ModelParams params = init_params(cfg, g.num_features(), g.num_classes());
  // Move gating and biases off their symmetric starting values so every
  // gradient entry is generic.
  Rng rng(seed ^ 0x5eedULL);
  for (auto& [name, p] : params) {
    if (name == "theta_g") {
      for (double& v : p.value.values()) v = 0.5 * rng.normal();
    } else if (p.kind == ParamKind::stereographic) {
      for (double& v : p.value.values()) v = 0.1 * rng.normal();
    }
  }
  return {std::move(g), std::move(masks), cfg, std::move(params)};
}

std::vector<GradRecord> gradcheck_model(const GradcheckProblem& problem, double step) {
  const GraphContext ctx = make_context(problem.graph, problem.config);
  const std::vector<std::size_t> rows = mask_indices(problem.masks.train);
  const LossBuilder loss = [&](Tape& tape, const ModelParams& p) {
    const BoundParams bound(tape, p);
    const ForwardResult fr = forward(bound, ctx, problem.config);
    return composite_loss(fr.logits, problem.graph.labels(), rows, fr.aux, ctx, problem.config,
                          problem.config.seed);
  };
  return grad_check(problem.params, loss, step);
}

SuiteResult run_gradcheck_suite(std::uint64_t seed) {
  const auto start = Clock::now();
  SuiteResult res;
  res.suite = "gradcheck";
  for (Variant v : {Variant::rmoe, Variant::stiefel, Variant::grassmann}) {
    std::vector<GradRecord> records = gradcheck_model(make_gradcheck_problem(v, seed));
    if (v == Variant::rmoe) {
      res.checks.push_back(make_check("full model rmoe", worst_error(records), 1e-4));
    } else {
      // span(q) = span(F) makes some projection gradients exactly zero; their
      // central differences are pure roundoff (~1e-11), so those entries are
      // judged by absolute error.
      res.checks.push_back(make_check("full model " + to_string(v) + " (exact adjoint)",
                                      worst_error_above(records, 1e-10), 1e-4));
    }
    for (GradRecord& r : records) {
      r.param_name = to_string(v) + "/" + r.param_name;
      res.gradients.push_back(std::move(r));
    }
  }
  res.seconds = seconds_since(start);
  return res;
}

std::string format_suite(const SuiteResult& result) {
  std::string out;
  char buf[256];
  for (const CheckResult& c : result.checks) {
    std::snprintf(buf, sizeof buf, "%s  %-36s max_err=%.3e  tol=%.1e\n", c.passed ? "PASS" : "FAIL",
                  c.name.c_str(), c.max_error, c.tolerance);
    out += buf;
  }
  if (!result.gradients.empty()) {
    std::snprintf(buf, sizeof buf, "%-28s %12s %12s\n", "parameter", "max_rel_err", "max_abs_err");
    out += buf;
    for (const GradRecord& r : result.gradients) {
      std::snprintf(buf, sizeof buf, "%-28s %12.3e %12.3e\n", r.param_name.c_str(), r.max_rel_err,
                    r.max_abs_err);
      out += buf;
    }
  }
  std::snprintf(buf, sizeof buf, "%s suite: %s (%.2f s)\n", result.suite.c_str(),
                result.passed() ? "PASS" : "FAIL", result.seconds);
  out += buf;
  return out;
}

}  // namespace geoformer
