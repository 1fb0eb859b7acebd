#include <cmath>

#include "geoformer/error.hpp"
#include "geoformer/manifolds.hpp"
#include "geoformer/optim.hpp"
#include "test_util.hpp"

using namespace geoformer;
using testutil::random_matrix;

namespace {

Gradients grads_of(const std::string& name, Matrix g) {
  Gradients out;
  out.emplace(name, std::move(g));
  return out;
}

// Gradient of ‖w − target‖² on a tape.
Gradients quadratic_grad(const ModelParams& p, const Matrix& target) {
  Tape tape;
  const BoundParams b(tape, p);
  return tape.backward(ad::frobenius_sq(ad::sub(b["w"], tape.constant(target))));
}

}  // namespace

TEST_CASE("adam: zero gradient leaves the parameter unchanged") {
  ModelParams p;
  p.add("w", Matrix{{1.0, -2.0}});
  OptimState s = make_optim_state(p, AdamHyper{});
  adam_step(s, p, grads_of("w", Matrix(1, 2)));
  CHECK(p.value("w") == Matrix{{1.0, -2.0}});
  CHECK(s.t == 1);
}

TEST_CASE("adam: first step has magnitude lr and is scale invariant") {
  for (double g : {1e-3, 0.5, -7.0}) {
    ModelParams p;
    p.add("w", Matrix{{0.0}});
    ModelParams p10 = p;
    OptimState s = make_optim_state(p, AdamHyper{0.01});
    OptimState s10 = s;
    adam_step(s, p, grads_of("w", Matrix{{g}}));
    adam_step(s10, p10, grads_of("w", Matrix{{10.0 * g}}));
    // |Δ| = lr·|g| / (|g| + ε) on the first bias-corrected step.
    CHECK(std::abs(p.value("w")(0, 0)) == doctest::Approx(0.01 * std::abs(g) / (std::abs(g) + 1e-8)).epsilon(1e-12));
    CHECK(std::abs(std::abs(p.value("w")(0, 0)) - 0.01) < 1e-6);
    CHECK(std::abs(p.value("w")(0, 0) - p10.value("w")(0, 0)) < 1e-6);
  }
}

TEST_CASE("adam converges on a convex quadratic") {
  Rng rng(1);
  const Matrix target = random_matrix(rng, 2, 3);
  ModelParams p;
  p.add("w", Matrix(2, 3));
  OptimState s = make_optim_state(p, AdamHyper{0.01});
  int steps = 0;
  while (max_abs_diff(p.value("w"), target) >= 1e-4 && steps < 2000) {
    adam_step(s, p, quadratic_grad(p, target));
    ++steps;
  }
  CHECK(max_abs_diff(p.value("w"), target) < 1e-4);
  CHECK(steps <= 2000);
}

TEST_CASE("adam contract errors") {
  ModelParams p;
  p.add("w", Matrix(2, 2));
  OptimState s = make_optim_state(p, AdamHyper{});
  CHECK_THROWS_AS(adam_step(s, p, Gradients{}), ContractError);
  CHECK_THROWS_AS(adam_step(s, p, grads_of("w", Matrix(3, 2))), ContractError);
}

TEST_CASE("riemannian adam at kappa = 0 follows the adam direction") {
  Rng rng(2);
  ModelParams flat;
  flat.add("b", random_matrix(rng, 1, 4, 0.3), ParamKind::stereographic, 0.0);
  ModelParams euc;
  euc.add("b", flat.value("b"));
  OptimState sf = make_optim_state(flat, AdamHyper{0.01});
  OptimState se = make_optim_state(euc, AdamHyper{0.01});
  for (int step = 0; step < 5; ++step) {
    Matrix g = random_matrix(rng, 1, 4);
    for (double& v : g.values()) v = std::copysign(std::abs(v) + 1e-3, v);
    const Matrix before = flat.value("b");
    const Matrix before_e = euc.value("b");
    riemannian_adam_step(sf, flat, grads_of("b", g));
    adam_step(se, euc, grads_of("b", g));
    const Matrix df = sub(flat.value("b"), before);
    const Matrix de = sub(euc.value("b"), before_e);
    const Matrix unit_f = scaled(df, 1.0 / frobenius_norm(df));
    const Matrix unit_e = scaled(de, 1.0 / frobenius_norm(de));
    CHECK(max_abs_diff(unit_f, unit_e) < 1e-6);
  }
}

TEST_CASE("riemannian adam keeps ball parameters in the domain") {
  Rng rng(3);
  for (double kv : {-1.0, -4.0}) {
    ModelParams p;
    p.add("b", random_matrix(rng, 1, 3, 0.1), ParamKind::stereographic, kv);
    OptimState s = make_optim_state(p, AdamHyper{0.5});
    for (int i = 0; i < 1000; ++i) {
      riemannian_adam_step(s, p, grads_of("b", random_matrix(rng, 1, 3, 100.0)));
      REQUIRE(std::sqrt(frobenius_sq(p.value("b"))) < domain_radius(Curvature(kv)));
    }
  }
}

TEST_CASE("riemannian adam converges to a hyperbolic target") {
  const Curvature k(-1.0);
  const Vec target{0.55, -0.3};
  ModelParams p;
  p.add("x", Matrix{{-0.2, 0.1}}, ParamKind::stereographic, -1.0);
  OptimState s = make_optim_state(p, AdamHyper{0.01});
  const Matrix tm{{target[0], target[1]}};
  int steps = 0;
  auto distance = [&] { return dist(k, p.value("x").row(0), target); };
  while (distance() >= 1e-3 && steps < 5000) {
    Tape tape;
    const BoundParams b(tape, p);
    const Var loss = ad::sum(ad::dist_sq_rows(k, b["x"], tape.constant(tm)));
    riemannian_adam_step(s, p, tape.backward(loss));
    ++steps;
  }
  CHECK(distance() < 1e-3);
  CHECK(steps <= 5000);
}

TEST_CASE("riemannian adam on a stiefel parameter stays orthonormal") {
  Rng rng(4);
  ModelParams p;
  p.add("U", stiefel_project(random_matrix(rng, 6, 3)).mat(), ParamKind::stiefel);
  OptimState s = make_optim_state(p, AdamHyper{0.1});
  for (int i = 0; i < 50; ++i) {
    riemannian_adam_step(s, p, grads_of("U", random_matrix(rng, 6, 3)));
    CHECK(orthonormality_residual(p.value("U")) < 1e-10);
  }
}

TEST_CASE("optimizer_step splits parameters by kind") {
  ModelParams p;
  p.add("w", Matrix{{1.0}});
  p.add("b", Matrix{{0.1}}, ParamKind::stereographic, -1.0);
  OptimState s = make_optim_state(p, AdamHyper{0.01});
  Gradients g;
  g.emplace("w", Matrix{{1.0}});
  g.emplace("b", Matrix{{1.0}});
  optimizer_step(s, p, g);
  CHECK(s.t == 1);
  CHECK(p.value("w")(0, 0) < 1.0);
  CHECK(p.value("b")(0, 0) < 0.1);

  ModelParams q;
  q.add("b", Matrix{{0.999}}, ParamKind::stereographic, -1.0);
  OptimState sq = make_optim_state(q, AdamHyper{1.0});
  optimizer_step(sq, q, grads_of("b", Matrix{{-1.0}}), false);
  CHECK(in_domain(Curvature(-1.0), q.value("b").row(0)));
}

TEST_CASE("optimizer state serialization round-trips bit-exactly") {
  Rng rng(5);
  ModelParams p;
  p.add("w", random_matrix(rng, 3, 2));
  p.add("b", random_matrix(rng, 1, 2, 0.1), ParamKind::stereographic, -1.0);
  OptimState s = make_optim_state(p, AdamHyper{0.003, 0.8, 0.99, 1e-7});
  for (int i = 0; i < 3; ++i) {
    Gradients g;
    g.emplace("w", random_matrix(rng, 3, 2));
    g.emplace("b", random_matrix(rng, 1, 2));
    optimizer_step(s, p, g);
  }
  const OptimState back = deserialize_optim_state(serialize_optim_state(s));
  CHECK(back == s);
  CHECK(serialize_optim_state(back) == serialize_optim_state(s));
  CHECK_THROWS_AS(deserialize_optim_state("{\"t\": 1}"), LoadError);
}
