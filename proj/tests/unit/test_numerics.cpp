#include <cmath>
#include <vector>

#include "geoformer/autodiff.hpp"
#include "geoformer/error.hpp"
#include "geoformer/gradcheck.hpp"
#include "geoformer/params.hpp"
#include "test_util.hpp"

using namespace geoformer;
using testutil::check_close;
using testutil::random_matrix;

TEST_CASE("matmul oracles") {
  const Matrix a{{1, 2}, {3, 4}};
  CHECK(matmul(Matrix::identity(2), a) == a);
  check_close(matmul(a, Matrix{{5}, {6}}), Matrix{{17}, {39}}, 0.0);
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionError);
}

TEST_CASE("transposed products agree with explicit transposes") {
  Rng rng(1);
  const Matrix a = random_matrix(rng, 7, 5);
  const Matrix b = random_matrix(rng, 7, 3);
  const Matrix c = random_matrix(rng, 4, 5);
  check_close(matmul_tn(a, b), matmul(transpose(a), b), 1e-13);
  check_close(matmul_nt(a, c), matmul(a, transpose(c)), 1e-13);
}

TEST_CASE("sparse products match dense") {
  CsrMatrix s;
  s.rows = 3;
  s.cols = 2;
  s.offsets = {0, 1, 1, 3};
  s.indices = {1, 0, 1};
  s.values = {2.0, -1.0, 0.5};
  Rng rng(2);
  const Matrix b = random_matrix(rng, 2, 4);
  check_close(spmm(s, b), matmul(s.to_dense(), b), 1e-15);
  const Matrix c = random_matrix(rng, 3, 4);
  check_close(spmm_t(s, c), matmul(transpose(s.to_dense()), c), 1e-15);
}

TEST_CASE("softmax_rows") {
  const Matrix s = softmax_rows(Matrix{{0, 0}, {std::log(2.0), 0}});
  CHECK(s(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s(1, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Rng rng(3);
  const Matrix m = random_matrix(rng, 4, 6, 3.0);
  Matrix shifted = m;
  for (std::size_t r = 0; r < 4; ++r) {
    for (double& v : shifted.row(r)) v += 100.0 * static_cast<double>(r) - 7.0;
  }
  check_close(softmax_rows(shifted), softmax_rows(m), 1e-14);
}

TEST_CASE("kernel results do not depend on the thread count") {
  Rng rng(4);
  const Matrix a = random_matrix(rng, 301, 40);
  const Matrix b = random_matrix(rng, 40, 33);
  set_kernel_threads(1);
  const Matrix one = matmul(a, b);
  const Matrix one_tn = matmul_tn(a, a);
  set_kernel_threads(4);
  const Matrix four = matmul(a, b);
  const Matrix four_tn = matmul_tn(a, a);
  set_kernel_threads(1);
  CHECK(one == four);
  CHECK(one_tn == four_tn);
}

TEST_CASE("require_finite names the location") {
  Matrix m(1, 2);
  m(0, 1) = std::nan("");
  CHECK_FALSE(all_finite(m));
  CHECK_THROWS_WITH_AS(require_finite(m, "probe"), doctest::Contains("probe"), NumericalError);
}

TEST_CASE("backward: linear and quadratic gradients") {
  const Matrix x{{1.5}, {-2.0}, {0.25}};
  Tape tape;
  const Var w = tape.parameter("w", Matrix{{0.3, -0.7, 2.0}});
  const Var f = ad::matmul(w, tape.constant(x));
  const Gradients g = tape.backward(f);
  check_close(g.at("w"), transpose(x), 0.0);

  Tape tape2;
  const Matrix w0{{1, -2}, {3, 0.5}};
  const Var w2 = tape2.parameter("W", w0);
  const Gradients g2 = tape2.backward(ad::scale(ad::frobenius_sq(w2), 0.5));
  check_close(g2.at("W"), w0, 1e-15);
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tape tape;
  const Var w = tape.parameter("w", Matrix(2, 2, 1.0));
  CHECK_THROWS_AS(tape.backward(w), ContractError);
}

TEST_CASE("a parameter used twice accumulates both paths") {
  Tape tape;
  const Var a = tape.parameter("a", Matrix{{2.0}});
  const Var b = tape.parameter("a", Matrix{{2.0}});
  const Gradients g = tape.backward(ad::hadamard(a, b));
  CHECK(g.at("a").scalar() == doctest::Approx(4.0));
}

TEST_CASE("grad_check on a quadratic is exact to roundoff") {
  ModelParams p;
  Rng rng(5);
  p.add("w", random_matrix(rng, 3, 4));
  const Matrix target = random_matrix(rng, 3, 4);
  const LossBuilder loss = [&](Tape& t, const ModelParams& ps) {
    const BoundParams b(t, ps);
    return ad::frobenius_sq(ad::sub(b["w"], t.constant(target)));
  };
  for (double step : {1e-4, 1e-5}) {
    CHECK(worst_error(grad_check(p, loss, step)) < 1e-8);
  }
}

TEST_CASE("grad_check detects a 10% gradient fault") {
  ModelParams p;
  Rng rng(6);
  p.add("w", random_matrix(rng, 2, 3));
  const LossBuilder loss = [](Tape& t, const ModelParams& ps) {
    return ad::frobenius_sq(BoundParams(t, ps)["w"]);
  };
  Tape tape;
  Gradients g = tape.backward(loss(tape, p));
  g["w"] *= 1.1;
  const double err = worst_error(compare_gradients(p, g, loss, 1e-5));
  CHECK(err == doctest::Approx(0.1 / 1.1).epsilon(1e-4));
  CHECK(err > 1e-4);
}

TEST_CASE("grad_check contract errors") {
  ModelParams p;
  p.add("w", Matrix(1, 1, 1.0));
  const LossBuilder loss = [](Tape& t, const ModelParams& ps) {
    return ad::frobenius_sq(BoundParams(t, ps)["w"]);
  };
  CHECK_THROWS_AS(grad_check(p, loss, 0.0), ContractError);
  CHECK_THROWS_AS(compare_gradients(p, Gradients{}, loss, 1e-5), ContractError);
}

// Every elementary op is checked against central differences through a
// random linear read-out, so each output entry carries a distinct weight.
namespace {

using UnaryOp = std::function<Var(Tape&, const Var&)>;

double check_unary(const Matrix& x0, const UnaryOp& op, std::uint64_t seed) {
  ModelParams p;
  p.add("x", x0);
  Tape probe;
  const Matrix shape = op(probe, probe.constant(x0)).value();
  Rng rng(seed);
  const Matrix readout = random_matrix(rng, shape.rows(), shape.cols());
  const LossBuilder loss = [&](Tape& t, const ModelParams& ps) {
    const Var y = op(t, BoundParams(t, ps)["x"]);
    return ad::sum(ad::hadamard(y, t.constant(readout)));
  };
  return worst_error_above(grad_check(p, loss, 1e-6), 1e-9);
}

}  // namespace

TEST_CASE("elementary op adjoints") {
  Rng rng(7);
  const Matrix x = random_matrix(rng, 4, 3);
  Matrix pos = x;
  for (double& v : pos.values()) v = 0.5 + std::abs(v);
  const Matrix other = random_matrix(rng, 4, 3);
  const Matrix right = random_matrix(rng, 3, 5);
  const std::vector<std::size_t> rows{2, 0, 2};
  const std::vector<int> labels{0, 2, 1, 1};

  const std::vector<std::pair<const char*, UnaryOp>> ops{
      {"matmul", [&](Tape& t, const Var& a) { return ad::matmul(a, t.constant(right)); }},
      {"transpose", [](Tape&, const Var& a) { return ad::transpose(a); }},
      {"hadamard", [&](Tape& t, const Var& a) { return ad::hadamard(a, t.constant(other)); }},
      {"divide", [&](Tape& t, const Var& a) { return ad::divide(t.constant(other), ad::add_scalar(ad::square(a), 1.0)); }},
      {"tanh", [](Tape&, const Var& a) { return ad::tanh(a); }},
      {"sigmoid", [](Tape&, const Var& a) { return ad::sigmoid(a); }},
      {"exp", [](Tape&, const Var& a) { return ad::exp(a); }},
      {"softplus", [](Tape&, const Var& a) { return ad::softplus(a); }},
      {"row_normalize", [](Tape&, const Var& a) { return ad::row_normalize(a); }},
      {"softmax_rows", [](Tape&, const Var& a) { return ad::softmax_rows(a); }},
      {"row_sum", [](Tape&, const Var& a) { return ad::row_sum(a); }},
      {"col_sum", [](Tape&, const Var& a) { return ad::col_sum(a); }},
      {"row_dot", [&](Tape& t, const Var& a) { return ad::row_dot(a, t.constant(other)); }},
      {"broadcast", [](Tape&, const Var& a) { return ad::broadcast_rows(ad::col_sum(a), 5); }},
      {"scale_rows", [](Tape&, const Var& a) { return ad::scale_rows(a, ad::row_sum(a)); }},
      {"slice_concat",
       [](Tape&, const Var& a) {
         const std::vector<Var> parts{ad::slice_cols(a, 2, 1), ad::slice_cols(a, 0, 2)};
         return ad::concat_cols(parts);
       }},
      {"gather_rows", [&](Tape&, const Var& a) { return ad::gather_rows(a, rows); }},
      {"cross_entropy", [&](Tape&, const Var& a) { return ad::cross_entropy(a, labels, rows); }},
  };
  for (const auto& [name, op] : ops) {
    CAPTURE(name);
    CHECK(check_unary(x, op, 11) < 1e-6);
  }
  CHECK(check_unary(pos, [](Tape&, const Var& a) { return ad::log(a); }, 12) < 1e-6);
  CHECK(check_unary(pos, [](Tape&, const Var& a) { return ad::sqrt(a); }, 13) < 1e-6);
}

TEST_CASE("straight_through passes gradients unchanged") {
  Tape tape;
  const Var a = tape.parameter("a", Matrix{{1.0, 2.0}});
  const Var st = ad::straight_through(a, Matrix{{5.0, 5.0}});
  CHECK(st.value() == Matrix{{5.0, 5.0}});
  const Gradients g = tape.backward(ad::sum(ad::scale(st, 3.0)));
  CHECK(g.at("a") == Matrix{{3.0, 3.0}});
}
