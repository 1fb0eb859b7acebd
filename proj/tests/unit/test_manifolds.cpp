#include <cmath>
#include <numbers>

#include "geoformer/error.hpp"
#include "geoformer/gradcheck.hpp"
#include "geoformer/manifolds.hpp"
#include "geoformer/selftest.hpp"
#include "test_util.hpp"

using namespace geoformer;
using testutil::check_close;
using testutil::random_matrix;

namespace {

const Curvature kHyp(-1.0);
const Curvature kFlat(0.0);
const Curvature kSph(1.0);

void check_vec(const Vec& got, const Vec& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= tol);
}

// Length of the segment 0 -> (r,0) under the ball metric 2/(1 - t²), Simpson's rule.
double ball_segment_length(double r) {
  const int n = 2000;
  const double h = r / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double t = i * h;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    s += w * 2.0 / (1.0 - t * t);
  }
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("exp0 examples") {
  check_vec(exp0(kFlat, Vec{0.3, 0.4}).coords, {0.3, 0.4}, 0.0);
  check_vec(exp0(kHyp, Vec{0.5, 0.0}).coords, {0.4621171573, 0.0}, 1e-10);
  check_vec(exp0(kSph, Vec{std::numbers::pi / 4.0, 0.0}).coords, {1.0, 0.0}, 1e-15);
  CHECK_THROWS_AS(exp0(kSph, Vec{2.0, 0.0}), DomainError);
}

TEST_CASE("log0 examples and round trip") {
  check_vec(log0(kHyp, Vec{0.4621171573, 0.0}), {0.5, 0.0}, 1e-10);
  check_vec(log0(kFlat, Vec{-2.0, 7.0}), {-2.0, 7.0}, 0.0);
  CHECK_THROWS_AS(log0(kHyp, Vec{1.0, 0.0}), DomainError);
  Rng rng(1);
  for (double kv : {-3.0, -1.0, 0.0, 1.0, 3.0}) {
    const Curvature k(kv);
    for (int i = 0; i < 200; ++i) {
      Vec v{0.2 * rng.normal(), 0.2 * rng.normal(), 0.2 * rng.normal()};
      check_vec(log0(k, exp0(k, v).coords), v, 1e-9);
    }
  }
}

TEST_CASE("series branch is continuous near the origin") {
  for (const Curvature k : {kHyp, kSph}) {
    for (double s : {1e-18, 1e-10, 1e-6, 1e-4, 1e-3}) {
      const double r = std::sqrt(s);
      const double tan_exact = k.hyperbolic() ? std::tanh(r) / r : std::tan(r) / r;
      const double atan_exact = k.hyperbolic() ? std::atanh(r) / r : std::atan(r) / r;
      CHECK(tan_ratio(k, s).first == doctest::Approx(tan_exact).epsilon(1e-13));
      CHECK(artan_ratio(k, s).first == doctest::Approx(atan_exact).epsilon(1e-13));
    }
  }
}

TEST_CASE("mobius_add examples") {
  Rng rng(2);
  const Vec y{0.1, -0.3};
  check_vec(mobius_add(kHyp, Vec{0.0, 0.0}, y).coords, y, 0.0);
  check_vec(mobius_add(kFlat, Vec{1.0, 2.0}, Vec{3.0, -1.0}).coords, {4.0, 1.0}, 0.0);
  check_vec(mobius_add(kHyp, Vec{0.5, 0.0}, Vec{0.5, 0.0}).coords, {0.8, 0.0}, 1e-12);
  CHECK_THROWS_AS(mobius_add(kSph, Vec{1.0, 0.0}, Vec{1.0, 0.0}), SingularityError);
}

TEST_CASE("dist examples") {
  const Vec x{0.2, -0.1};
  CHECK(dist(kHyp, x, x) == doctest::Approx(0.0));
  CHECK(dist(kFlat, Vec{0.0, 0.0}, Vec{0.3, 0.4}) == doctest::Approx(1.0).epsilon(1e-15));
  const double d = dist(kHyp, Vec{0.0, 0.0}, Vec{0.5, 0.0});
  CHECK(d == doctest::Approx(1.0986122887).epsilon(1e-10));
  CHECK(d == doctest::Approx(ball_segment_length(0.5)).epsilon(1e-10));
}

TEST_CASE("project_to_domain") {
  const Vec big{2.0, 0.0};
  check_vec(project_to_domain(kFlat, big).coords, big, 0.0);
  check_vec(project_to_domain(kHyp, Vec{0.3, 0.1}, 1e-5).coords, {0.3, 0.1}, 0.0);
  check_vec(project_to_domain(kHyp, big, 1e-5).coords, {1.0 - 1e-5, 0.0}, 1e-15);
  CHECK(in_domain(kHyp, project_to_domain(Curvature(-4.0), Vec{9.0, 9.0}).coords));
}

TEST_CASE("conformal factor") {
  CHECK(conformal_factor(kFlat, Vec{5.0}) == 2.0);
  CHECK(conformal_factor(kHyp, Vec{0.5, 0.0}) == doctest::Approx(2.0 / 0.75));
}

TEST_CASE("stiefel_project examples") {
  check_close(stiefel_project(Matrix::identity(2)).mat(), Matrix::identity(2), 1e-15);
  check_close(stiefel_project(Matrix{{1, 1}, {0, 1}}).mat(), Matrix::identity(2), 1e-15);
  check_close(stiefel_project(Matrix{{0, 1}, {1, 0}}).mat(), Matrix{{0, 1}, {1, 0}}, 1e-15);
  CHECK_THROWS_AS(stiefel_project(Matrix{{1, 2}, {2, 4}}), RankError);
  CHECK_THROWS_AS(stiefel_project(Matrix(2, 3, 1.0)), DimensionError);
}

TEST_CASE("grassmann_project examples") {
  Rng rng(3);
  const Matrix u = stiefel_project(random_matrix(rng, 6, 3)).mat();
  check_close(grassmann_project(u).projector(), matmul_nt(u, u), 1e-12);
  check_close(grassmann_project(Matrix{{1}, {1}}).projector(), Matrix{{0.5, 0.5}, {0.5, 0.5}}, 1e-15);
  const Matrix m = random_matrix(rng, 7, 3);
  const Matrix q = qr_decompose(random_matrix(rng, 3, 3)).q;
  check_close(grassmann_project(matmul(m, q)).projector(), grassmann_project(m).projector(), 1e-9);
}

TEST_CASE("qr and svd reconstruct their input") {
  Rng rng(4);
  const Matrix m = random_matrix(rng, 9, 4);
  const QrResult qr = qr_decompose(m);
  check_close(matmul(qr.q, qr.r), m, 1e-13);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(qr.r(i, i) >= 0.0);
    for (std::size_t j = 0; j < i; ++j) CHECK(qr.r(i, j) == 0.0);
  }
  const SvdResult svd = thin_svd(m);
  Matrix us = svd.u;
  for (std::size_t r = 0; r < us.rows(); ++r) {
    for (std::size_t c = 0; c < 4; ++c) us(r, c) *= svd.sigma[c];
  }
  check_close(matmul_nt(us, svd.v), m, 1e-12);
  CHECK(orthonormality_residual(svd.u) < 1e-12);
  CHECK(orthonormality_residual(svd.v) < 1e-12);
  for (std::size_t c = 1; c < 4; ++c) CHECK(svd.sigma[c - 1] >= svd.sigma[c]);
}

namespace {

// Central differences of sum(readout ∘ f(m)) with respect to m.
template <typename F>
Matrix numeric_adjoint(const Matrix& m, const Matrix& readout, F f) {
  Matrix grad(m.rows(), m.cols());
  Matrix probe = m;
  const double h = 1e-6;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double orig = probe.values()[i];
    probe.values()[i] = orig + h;
    const double up = frobenius_sq(add(f(probe), readout)) - frobenius_sq(sub(f(probe), readout));
    probe.values()[i] = orig - h;
    const double down = frobenius_sq(add(f(probe), readout)) - frobenius_sq(sub(f(probe), readout));
    probe.values()[i] = orig;
    grad.values()[i] = (up - down) / (4.0 * 2.0 * h);  // <a,b> = (|a+b|² - |a-b|²)/4
  }
  return grad;
}

}  // namespace

TEST_CASE("qr adjoint matches finite differences") {
  Rng rng(5);
  const Matrix m = random_matrix(rng, 8, 4);
  const Matrix readout = random_matrix(rng, 8, 4);
  const Matrix analytic = qr_q_backward(qr_decompose(m), readout);
  const Matrix numeric = numeric_adjoint(m, readout, [](const Matrix& x) { return qr_decompose(x).q; });
  check_close(analytic, numeric, 1e-7);
}

TEST_CASE("svd adjoint matches finite differences") {
  Rng rng(6);
  const Matrix m = random_matrix(rng, 8, 4);
  const Matrix readout = random_matrix(rng, 8, 4);
  const Matrix analytic = svd_u_backward(thin_svd(m), readout);
  const Matrix numeric = numeric_adjoint(m, readout, [](const Matrix& x) { return thin_svd(x).u; });
  check_close(analytic, numeric, 1e-7);
}

TEST_CASE("orth_penalty examples") {
  Rng rng(7);
  CHECK(orth_penalty(stiefel_project(random_matrix(rng, 5, 3)).mat(), 1.0) < 1e-25);
  CHECK(orth_penalty(scaled(Matrix::identity(2), 2.0), 1.0) == doctest::Approx(18.0));
  CHECK(orth_penalty(Matrix(4, 2), 0.5) == doctest::Approx(1.0));
  Tape tape;
  const Var y = tape.constant(scaled(Matrix::identity(2), 2.0));
  CHECK(ad::orth_penalty(y, 1.0).value().scalar() == doctest::Approx(18.0));
}

TEST_CASE("stiefel_retract examples") {
  Rng rng(8);
  const StiefelMatrix x = stiefel_project(random_matrix(rng, 6, 3));
  const Matrix g = random_matrix(rng, 6, 3);
  check_close(stiefel_retract(x, g, 0.0).mat(), x.mat(), 0.0);
  const Matrix s{{2, 1, 0}, {1, -1, 3}, {0, 3, 0.5}};
  check_close(stiefel_retract(x, matmul(x.mat(), s), 0.1).mat(), x.mat(), 1e-14);
  CHECK(orthonormality_residual(stiefel_retract(x, g, 1e-3).mat()) < 1e-12);
}

TEST_CASE("tape geometry ops match the vector versions") {
  Rng rng(9);
  for (double kv : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    const Curvature k(kv);
    const double r = kv < 0 ? 0.4 / std::sqrt(-kv) : 0.4;
    const Matrix x = random_matrix(rng, 5, 3, r / 2);
    const Matrix y = random_matrix(rng, 5, 3, r / 2);
    Tape tape;
    const Var vx = tape.constant(x);
    const Var vy = tape.constant(y);
    const Matrix e = ad::exp0_rows(k, vx).value();
    const Matrix l = ad::log0_rows(k, vx).value();
    const Matrix m = ad::mobius_add_rows(k, vx, vy).value();
    const Matrix d2 = ad::dist_sq_rows(k, vx, vy).value();
    const Matrix d2r = ad::dist_sq_rows(k, vy, vx).value();
    for (std::size_t i = 0; i < 5; ++i) {
      check_vec(Vec(e.row(i).begin(), e.row(i).end()), exp0(k, x.row(i)).coords, 1e-14);
      check_vec(Vec(l.row(i).begin(), l.row(i).end()), log0(k, x.row(i)), 1e-14);
      check_vec(Vec(m.row(i).begin(), m.row(i).end()), mobius_add(k, x.row(i), y.row(i)).coords, 1e-14);
      const double d = dist(k, x.row(i), y.row(i));
      CHECK(d2(i, 0) == doctest::Approx(d * d).epsilon(1e-12));
      CHECK(d2(i, 0) == d2r(i, 0));
    }
  }
}

TEST_CASE("tape geometry adjoints") {
  Rng rng(10);
  for (double kv : {-1.0, 0.0, 1.0}) {
    CAPTURE(kv);
    const Curvature k(kv);
    ModelParams p;
    p.add("x", random_matrix(rng, 4, 3, 0.25));
    p.add("y", random_matrix(rng, 4, 3, 0.25));
    const Matrix readout = random_matrix(rng, 4, 3);
    const LossBuilder loss = [&](Tape& t, const ModelParams& ps) {
      const BoundParams b(t, ps);
      const Var m = ad::mobius_add_rows(k, ad::exp0_rows(k, b["x"]), b["y"]);
      const Var l = ad::log0_rows(k, m);
      return ad::add(ad::sum(ad::hadamard(l, t.constant(readout))),
                     ad::sum(ad::dist_sq_rows(k, b["x"], b["y"])));
    };
    CHECK(worst_error(grad_check(p, loss, 1e-6)) < 1e-6);
  }
}

TEST_CASE("geometry and projection suites pass") {
  const SuiteResult geo = run_geometry_suite();
  CHECK(geo.passed());
  CHECK(geo.seconds < 5.0);
  CHECK(run_projection_suite().passed());
}
