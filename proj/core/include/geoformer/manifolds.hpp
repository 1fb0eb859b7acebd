#pragma once

// Constant-curvature geometry in the kappa-stereographic chart, plus the
// Stiefel / Grassmann projections used to orthogonalize attention inputs.
//
// kappa < 0: Poincare ball of radius 1/sqrt(-kappa)
// kappa = 0: Euclidean space
// kappa > 0: stereographic projection of the sphere (all of R^n)

#include <span>
#include <utility>
#include <vector>

#include "geoformer/autodiff.hpp"
#include "geoformer/matrix.hpp"

namespace geoformer {

struct Curvature {
  double kappa = 0.0;

  constexpr Curvature() = default;
  constexpr explicit Curvature(double k) : kappa(k) {}

  bool hyperbolic() const { return kappa < 0.0; }
  bool flat() const { return kappa == 0.0; }
  bool spherical() const { return kappa > 0.0; }
};

/// {-3, -1, 0, 1, 3}.
std::vector<Curvature> default_curvatures();

struct ManifoldPoint {
  Curvature kappa;
  std::vector<double> coords;
};

using Vec = std::vector<double>;

/// Projection margin used by optimizers and encoders.
inline constexpr double kDomainMargin = 1e-5;

/// Radius of the open ball for kappa < 0; +inf otherwise.
double domain_radius(Curvature k);
bool in_domain(Curvature k, std::span<const double> x);

// tan_k(sqrt|k| r) / (sqrt|k| r) and artan_k(sqrt|k| r) / (sqrt|k| r) written
// as functions of s = r^2, which keeps both smooth at the origin. Each returns
// (value, d value / d s).
std::pair<double, double> tan_ratio(Curvature k, double s);
std::pair<double, double> artan_ratio(Curvature k, double s);

ManifoldPoint exp0(Curvature k, std::span<const double> v);
Vec log0(Curvature k, std::span<const double> x);
ManifoldPoint mobius_add(Curvature k, std::span<const double> x, std::span<const double> y);
double dist(Curvature k, std::span<const double> x, std::span<const double> y);
ManifoldPoint project_to_domain(Curvature k, std::span<const double> x,
                                double margin = kDomainMargin);

/// Conformal factor 2 / (1 + kappa ‖x‖²).
double conformal_factor(Curvature k, std::span<const double> x);

/// Row-wise versions recorded on a tape; every row of the operands is one point.
namespace ad {
Var exp0_rows(Curvature k, const Var& tangents);
Var log0_rows(Curvature k, const Var& points);
Var mobius_add_rows(Curvature k, const Var& x, const Var& y);
/// Squared geodesic distance between matching rows, as an n x 1 column.
Var dist_sq_rows(Curvature k, const Var& x, const Var& y);
/// lambda · ‖yᵀy − I‖²_F.
Var orth_penalty(const Var& y, double lambda);
}  // namespace ad

/// Matrix with orthonormal columns (n >= k).
class StiefelMatrix {
 public:
  /// Validates ‖mᵀm − I‖_F < 1e-8.
  static StiefelMatrix from_orthonormal(Matrix m);

  const Matrix& mat() const { return mat_; }
  std::size_t n() const { return mat_.rows(); }
  std::size_t k() const { return mat_.cols(); }

 private:
  explicit StiefelMatrix(Matrix m) : mat_(std::move(m)) {}
  Matrix mat_;
};

/// A subspace, stored through one orthonormal basis of it.
struct GrassmannRep {
  StiefelMatrix basis;

  /// U·Uᵀ, which is independent of the chosen basis.
  Matrix projector() const;
};

struct QrResult {
  Matrix q;  // n x k, orthonormal columns
  Matrix r;  // k x k, upper triangular with non-negative diagonal
};

/// Householder thin QR with diag(R) >= 0. Requires rows >= cols.
QrResult qr_decompose(const Matrix& m);

struct SvdResult {
  Matrix u;                    // n x k
  std::vector<double> sigma;   // descending
  Matrix v;                    // k x k
};

/// Thin SVD through QR followed by one-sided Jacobi on R. Each right singular
/// vector is signed so its first non-negligible entry is positive.
SvdResult thin_svd(const Matrix& m);

StiefelMatrix stiefel_project(const Matrix& m);
GrassmannRep grassmann_project(const Matrix& m);

/// Gradient of a loss through m -> Q of the QR factorization.
Matrix qr_q_backward(const QrResult& qr, const Matrix& q_bar);
/// Gradient of a loss through m -> U of the thin SVD. Needs distinct singular values.
Matrix svd_u_backward(const SvdResult& svd, const Matrix& u_bar);

double orth_penalty(const Matrix& y, double lambda);

/// g − x·sym(xᵀg): projection onto the tangent space of the Stiefel manifold at x.
Matrix stiefel_tangent(const Matrix& x, const Matrix& g);
StiefelMatrix stiefel_retract(const StiefelMatrix& x, const Matrix& g, double step);

}  // namespace geoformer
