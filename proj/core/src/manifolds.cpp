#include "geoformer/manifolds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "geoformer/error.hpp"

namespace geoformer {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm_sq(std::span<const double> a) { return dot(a, a); }

void require_same_dim(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size()) throw DimensionError(std::string(op) + ": dimension mismatch");
}

enum class RatioKind { tanh, tan, artanh, atan };

// R(y) = F(sqrt y) / sqrt y and dR/dy. Short Taylor expansions near zero
// avoid the cancellation in (F'(x) x - F(x)) / (2 x^3).
std::pair<double, double> ratio(RatioKind kind, double y) {
  constexpr double kSeriesLimit = 1e-4;
  if (y < kSeriesLimit) {
    switch (kind) {
      case RatioKind::tanh:
        return {1.0 - y / 3.0 + 2.0 * y * y / 15.0 - 17.0 * y * y * y / 315.0,
                -1.0 / 3.0 + 4.0 * y / 15.0 - 51.0 * y * y / 315.0};
      case RatioKind::tan:
        return {1.0 + y / 3.0 + 2.0 * y * y / 15.0 + 17.0 * y * y * y / 315.0,
                1.0 / 3.0 + 4.0 * y / 15.0 + 51.0 * y * y / 315.0};
      case RatioKind::artanh:
        return {1.0 + y / 3.0 + y * y / 5.0 + y * y * y / 7.0,
                1.0 / 3.0 + 2.0 * y / 5.0 + 3.0 * y * y / 7.0};
      case RatioKind::atan:
        return {1.0 - y / 3.0 + y * y / 5.0 - y * y * y / 7.0,
                -1.0 / 3.0 + 2.0 * y / 5.0 - 3.0 * y * y / 7.0};
    }
  }
  const double x = std::sqrt(y);
  double f = 0.0;
  double df = 0.0;
  switch (kind) {
    case RatioKind::tanh: {
      f = std::tanh(x);
      df = 1.0 - f * f;
      break;
    }
    case RatioKind::tan: {
      f = std::tan(x);
      df = 1.0 + f * f;
      break;
    }
    case RatioKind::artanh:
      f = std::atanh(x);
      df = 1.0 / (1.0 - y);
      break;
    case RatioKind::atan:
      f = std::atan(x);
      df = 1.0 / (1.0 + y);
      break;
  }
  return {f / x, (df * x - f) / (2.0 * x * y)};
}

Vec scaled_vec(std::span<const double> v, double s) {
  Vec out(v.begin(), v.end());
  for (double& e : out) e *= s;
  return out;
}

}  // namespace

std::vector<Curvature> default_curvatures() {
  return {Curvature(-3.0), Curvature(-1.0), Curvature(0.0), Curvature(1.0), Curvature(3.0)};
}

double domain_radius(Curvature k) {
  return k.hyperbolic() ? 1.0 / std::sqrt(-k.kappa) : std::numeric_limits<double>::infinity();
}

bool in_domain(Curvature k, std::span<const double> x) {
  for (double v : x) {
    if (!std::isfinite(v)) return false;
  }
  if (!k.hyperbolic()) return true;
  return std::sqrt(norm_sq(x)) < domain_radius(k);
}

std::pair<double, double> tan_ratio(Curvature k, double s) {
  if (k.flat()) return {1.0, 0.0};
  const double a = std::abs(k.kappa);
  const double y = a * s;
  if (k.spherical() && std::sqrt(y) >= std::numbers::pi / 2.0) {
    throw DomainError("exp0: spherical tangent norm reaches pi/(2 sqrt(kappa))");
  }
  auto [v, d] = ratio(k.hyperbolic() ? RatioKind::tanh : RatioKind::tan, y);
  return {v, a * d};
}

std::pair<double, double> artan_ratio(Curvature k, double s) {
  if (k.flat()) return {1.0, 0.0};
  const double a = std::abs(k.kappa);
  const double y = a * s;
  if (k.hyperbolic() && y >= 1.0) {
    throw DomainError("log0: point lies outside the Poincare ball");
  }
  auto [v, d] = ratio(k.hyperbolic() ? RatioKind::artanh : RatioKind::atan, y);
  return {v, a * d};
}

ManifoldPoint exp0(Curvature k, std::span<const double> v) {
  const double factor = tan_ratio(k, norm_sq(v)).first;
  return {k, scaled_vec(v, factor)};
}

Vec log0(Curvature k, std::span<const double> x) {
  if (!in_domain(k, x)) throw DomainError("log0: point outside the domain of its curvature");
  const double factor = artan_ratio(k, norm_sq(x)).first;
  return scaled_vec(x, factor);
}

ManifoldPoint mobius_add(Curvature k, std::span<const double> x, std::span<const double> y) {
  require_same_dim(x, y, "mobius_add");
  const double kk = k.kappa;
  const double xy = dot(x, y);
  const double x2 = norm_sq(x);
  const double y2 = norm_sq(y);
  const double den = 1.0 - 2.0 * kk * xy + kk * kk * x2 * y2;
  if (std::abs(den) < 1e-15) throw SingularityError("mobius_add: antipodal configuration");
  const double cx = (1.0 - 2.0 * kk * xy - kk * y2) / den;
  const double cy = (1.0 + kk * x2) / den;
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = cx * x[i] + cy * y[i];
  return {k, std::move(out)};
}

double dist(Curvature k, std::span<const double> x, std::span<const double> y) {
  require_same_dim(x, y, "dist");
  if (!in_domain(k, x) || !in_domain(k, y)) {
    throw DomainError("dist: point outside the domain of its curvature");
  }
  const Vec neg_x = scaled_vec(x, -1.0);
  const ManifoldPoint m = mobius_add(k, neg_x, y);
  const double s = norm_sq(m.coords);
  return 2.0 * std::sqrt(s) * artan_ratio(k, s).first;
}

ManifoldPoint project_to_domain(Curvature k, std::span<const double> x, double margin) {
  Vec out(x.begin(), x.end());
  if (k.hyperbolic()) {
    const double limit = (1.0 - margin) / std::sqrt(-k.kappa);
    const double n = std::sqrt(norm_sq(x));
    if (n >= limit) {
      for (double& v : out) v *= limit / n;
    }
  }
  return {k, std::move(out)};
}

double conformal_factor(Curvature k, std::span<const double> x) {
  return 2.0 / (1.0 + k.kappa * norm_sq(x));
}

namespace ad {

Var exp0_rows(Curvature k, const Var& tangents) {
  if (k.flat()) return tangents;
  const Var s = row_dot(tangents, tangents);
  const Var factor = map(s, [k](double v) { return tan_ratio(k, v); }, "exp0");
  return scale_rows(tangents, factor);
}

Var log0_rows(Curvature k, const Var& points) {
  if (k.flat()) return points;
  const Var s = row_dot(points, points);
  const Var factor = map(s, [k](double v) { return artan_ratio(k, v); }, "log0");
  return scale_rows(points, factor);
}

Var mobius_add_rows(Curvature k, const Var& x, const Var& y) {
  require_same_shape(x.value(), y.value(), "mobius_add_rows");
  if (k.flat()) return add(x, y);
  const double kk = k.kappa;
  const Var xy = row_dot(x, y);
  const Var x2 = row_dot(x, x);
  const Var y2 = row_dot(y, y);
  // den = 1 - 2k<x,y> + k^2 |x|^2 |y|^2
  const Var den = add_scalar(add(scale(xy, -2.0 * kk), scale(hadamard(x2, y2), kk * kk)), 1.0);
  for (double v : den.value().values()) {
    if (std::abs(v) < 1e-15) throw SingularityError("mobius_add: antipodal configuration");
  }
  const Var inv_den = map(den, [](double v) { return std::pair{1.0 / v, -1.0 / (v * v)}; },
                          "reciprocal");
  const Var cx = add_scalar(add(scale(xy, -2.0 * kk), scale(y2, -kk)), 1.0);
  const Var cy = add_scalar(scale(x2, kk), 1.0);
  const Var num = add(scale_rows(x, cx), scale_rows(y, cy));
  return scale_rows(num, inv_den);
}

Var dist_sq_rows(Curvature k, const Var& x, const Var& y) {
  require_same_shape(x.value(), y.value(), "dist_sq_rows");
  const Var diff = sub(x, y);
  const Var d2 = row_dot(diff, diff);
  if (k.flat()) return scale(d2, 4.0);
  // ‖(−x) ⊕ y‖² = ‖x − y‖² / (1 + 2κ⟨x,y⟩ + κ²‖x‖²‖y‖²), symmetric in x and y.
  const double kk = k.kappa;
  const Var den = add_scalar(
      add(scale(row_dot(x, y), 2.0 * kk), scale(hadamard(row_dot(x, x), row_dot(y, y)), kk * kk)), 1.0);
  for (double v : den.value().values()) {
    if (std::abs(v) < 1e-15) throw SingularityError("dist: antipodal configuration");
  }
  const Var s = hadamard(d2, map(den, [](double v) { return std::pair{1.0 / v, -1.0 / (v * v)}; },
                                 "reciprocal"));
  const Var r = map(s, [k](double v) { return artan_ratio(k, v); }, "artan_ratio");
  return scale(hadamard(s, square(r)), 4.0);
}

Var orth_penalty(const Var& y, double lambda) {
  if (lambda < 0.0) throw ContractError("orth_penalty: lambda must be non-negative");
  Tape& tape = y.tape();
  const Var gram = matmul(transpose(y), y);
  const Var resid = sub(gram, tape.constant(Matrix::identity(y.cols())));
  return scale(frobenius_sq(resid), lambda);
}

}  // namespace ad

StiefelMatrix StiefelMatrix::from_orthonormal(Matrix m) {
  if (m.rows() < m.cols()) throw DimensionError("StiefelMatrix: requires n >= k");
  if (orthonormality_residual(m) >= 1e-8) {
    throw ContractError("StiefelMatrix: columns are not orthonormal");
  }
  return StiefelMatrix(std::move(m));
}

Matrix GrassmannRep::projector() const { return matmul_nt(basis.mat(), basis.mat()); }

QrResult qr_decompose(const Matrix& m) {
  const std::size_t n = m.rows();
  const std::size_t k = m.cols();
  if (n < k) throw DimensionError("qr_decompose: requires rows >= cols");
  Matrix a = m;
  std::vector<Vec> reflectors(k);
  for (std::size_t j = 0; j < k; ++j) {
    Vec v(n - j);
    for (std::size_t i = j; i < n; ++i) v[i - j] = a(i, j);
    const double xnorm = std::sqrt(norm_sq(v));
    if (xnorm == 0.0) continue;
    const double alpha = v[0] >= 0.0 ? -xnorm : xnorm;
    v[0] -= alpha;
    const double vnorm = std::sqrt(norm_sq(v));
    if (vnorm == 0.0) continue;
    for (double& e : v) e /= vnorm;
    for (std::size_t c = j; c < k; ++c) {
      double proj = 0.0;
      for (std::size_t i = j; i < n; ++i) proj += v[i - j] * a(i, c);
      for (std::size_t i = j; i < n; ++i) a(i, c) -= 2.0 * v[i - j] * proj;
    }
    reflectors[j] = std::move(v);
  }

  QrResult out{Matrix(n, k), Matrix(k, k)};
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t c = i; c < k; ++c) out.r(i, c) = a(i, c);
  }
  for (std::size_t i = 0; i < k; ++i) out.q(i, i) = 1.0;
  for (std::size_t j = k; j-- > 0;) {
    const Vec& v = reflectors[j];
    if (v.empty()) continue;
    for (std::size_t c = 0; c < k; ++c) {
      double proj = 0.0;
      for (std::size_t i = j; i < n; ++i) proj += v[i - j] * out.q(i, c);
      for (std::size_t i = j; i < n; ++i) out.q(i, c) -= 2.0 * v[i - j] * proj;
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (out.r(j, j) < 0.0) {
      for (std::size_t c = 0; c < k; ++c) out.r(j, c) = -out.r(j, c);
      for (std::size_t i = 0; i < n; ++i) out.q(i, j) = -out.q(i, j);
    }
  }
  return out;
}

SvdResult thin_svd(const Matrix& m) {
  const std::size_t k = m.cols();
  const QrResult qr = qr_decompose(m);

  // One-sided Jacobi on the columns of R.
  Matrix b = qr.r;
  Matrix v = Matrix::identity(k);
  constexpr int kMaxSweeps = 80;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < k; ++p) {
      for (std::size_t q = p + 1; q < k; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
          alpha += b(i, p) * b(i, p);
          beta += b(i, q) * b(i, q);
          gamma += b(i, p) * b(i, q);
        }
        if (std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < k; ++i) {
          const double bp = b(i, p);
          const double bq = b(i, q);
          b(i, p) = c * bp - s * bq;
          b(i, q) = s * bp + c * bq;
          const double vp = v(i, p);
          const double vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(k);
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += b(i, j) * b(i, j);
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t c) { return sigma[a] > sigma[c]; });

  SvdResult out{Matrix(), std::vector<double>(k), Matrix(k, k)};
  Matrix ur(k, k);
  for (std::size_t jj = 0; jj < k; ++jj) {
    const std::size_t j = order[jj];
    out.sigma[jj] = sigma[j];
    for (std::size_t i = 0; i < k; ++i) {
      out.v(i, jj) = v(i, j);
      ur(i, jj) = sigma[j] > 0.0 ? b(i, j) / sigma[j] : 0.0;
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < k; ++i) {
      if (std::abs(out.v(i, j)) > 1e-14) {
        if (out.v(i, j) < 0.0) {
          for (std::size_t r = 0; r < k; ++r) {
            out.v(r, j) = -out.v(r, j);
            ur(r, j) = -ur(r, j);
          }
        }
        break;
      }
    }
  }
  out.u = matmul(qr.q, ur);
  return out;
}

StiefelMatrix stiefel_project(const Matrix& m) {
  QrResult qr = qr_decompose(m);
  for (std::size_t j = 0; j < qr.r.rows(); ++j) {
    if (std::abs(qr.r(j, j)) < 1e-12) {
      throw RankError("stiefel_project: column " + std::to_string(j) + " is linearly dependent");
    }
  }
  return StiefelMatrix::from_orthonormal(std::move(qr.q));
}

GrassmannRep grassmann_project(const Matrix& m) {
  if (m.rows() < m.cols()) throw DimensionError("grassmann_project: requires rows >= cols");
  SvdResult svd = thin_svd(m);
  if (!svd.sigma.empty() && svd.sigma.back() < 1e-12) {
    throw RankError("grassmann_project: smallest singular value below 1e-12");
  }
  return GrassmannRep{StiefelMatrix::from_orthonormal(std::move(svd.u))};
}

namespace {

// Solves X·Rᵀ = B for X with R upper triangular (so X = B·R^{-T}).
Matrix right_solve_rt(const Matrix& b, const Matrix& r) {
  const std::size_t k = r.rows();
  Matrix x(b.rows(), k);
  for (std::size_t i = 0; i < b.rows(); ++i) {
    // Row i: sum_j x(i,j) r(c,j) = b(i,c) for every c; r(c,j) = 0 for j < c.
    for (std::size_t c = k; c-- > 0;) {
      double s = b(i, c);
      for (std::size_t j = c + 1; j < k; ++j) s -= x(i, j) * r(c, j);
      x(i, c) = s / r(c, c);
    }
  }
  return x;
}

}  // namespace

Matrix qr_q_backward(const QrResult& qr, const Matrix& q_bar) {
  const Matrix& q = qr.q;
  require_same_shape(q, q_bar, "qr_q_backward");
  const std::size_t k = q.cols();
  // (I - QQᵀ) Q̄
  Matrix proj = q_bar;
  proj -= matmul(q, matmul_tn(q, q_bar));
  // strict lower part of QᵀQ̄ - Q̄ᵀQ
  const Matrix b = matmul_tn(q, q_bar);
  Matrix low(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < i; ++j) low(i, j) = b(i, j) - b(j, i);
  }
  proj += matmul(q, low);
  return right_solve_rt(proj, qr.r);
}

Matrix svd_u_backward(const SvdResult& svd, const Matrix& u_bar) {
  const Matrix& u = svd.u;
  require_same_shape(u, u_bar, "svd_u_backward");
  const std::size_t k = u.cols();
  const Matrix utub = matmul_tn(u, u_bar);
  Matrix inner(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      const double gap = svd.sigma[j] * svd.sigma[j] - svd.sigma[i] * svd.sigma[i];
      if (std::abs(gap) < 1e-14) {
        throw RankError("svd_u_backward: repeated singular values");
      }
      inner(i, j) = (utub(i, j) - utub(j, i)) / gap * svd.sigma[j];
    }
  }
  Matrix term = matmul(u, inner);
  Matrix perp = u_bar;
  perp -= matmul(u, utub);
  for (std::size_t r = 0; r < perp.rows(); ++r) {
    for (std::size_t c = 0; c < k; ++c) perp(r, c) /= svd.sigma[c];
  }
  term += perp;
  return matmul_nt(term, svd.v);
}

double orth_penalty(const Matrix& y, double lambda) {
  if (lambda < 0.0) throw ContractError("orth_penalty: lambda must be non-negative");
  const double r = orthonormality_residual(y);
  return lambda * r * r;
}

Matrix stiefel_tangent(const Matrix& x, const Matrix& g) {
  require_same_shape(x, g, "stiefel_tangent");
  Matrix xtg = matmul_tn(x, g);
  Matrix sym = add(xtg, transpose(xtg));
  sym *= 0.5;
  return sub(g, matmul(x, sym));
}

StiefelMatrix stiefel_retract(const StiefelMatrix& x, const Matrix& g, double step) {
  if (step == 0.0) return x;
  Matrix moved = x.mat();
  moved -= scaled(stiefel_tangent(x.mat(), g), step);
  return stiefel_project(moved);
}

}  // namespace geoformer
