#include "geoformer/matrix.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>

#include "geoformer/error.hpp"

namespace geoformer {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

std::size_t threads_from_env() {
  const char* env = std::getenv("GEOFORMER_THREADS");
  if (env == nullptr) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || v < 1) return 1;
  return static_cast<std::size_t>(v);
}

std::atomic<std::size_t>& thread_setting() {
  static std::atomic<std::size_t> n{threads_from_env()};
  return n;
}

// Runs body(begin, end) over disjoint row ranges. Each output row is written
// by exactly one worker, so the result does not depend on the thread count.
template <typename Body>
void for_row_blocks(std::size_t rows, std::size_t work_per_row, Body&& body) {
  std::size_t threads = kernel_threads();
  constexpr std::size_t kMinWork = 1 << 16;
  if (threads > 1 && rows * work_per_row < kMinWork * threads) {
    threads = std::max<std::size_t>(1, rows * work_per_row / kMinWork);
  }
  threads = std::min(threads, rows);
  if (threads <= 1) {
    body(std::size_t{0}, rows);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (rows + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(rows, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::column(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

double Matrix::scalar() const {
  if (rows_ != 1 || cols_ != 1) {
    throw ContractError("scalar(): matrix is " + shape_str(*this) + ", expected 1x1");
  }
  return data_[0];
}

Matrix& Matrix::operator+=(const Matrix& other) {
  require_same_shape(*this, other, "+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  require_same_shape(*this, other, "-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Matrix CsrMatrix::to_dense() const {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t p = offsets[r]; p < offsets[r + 1]; ++p) m(r, indices[p]) += values[p];
  }
  return m;
}

std::size_t kernel_threads() { return thread_setting().load(); }

void set_kernel_threads(std::size_t n) { thread_setting().store(std::max<std::size_t>(1, n)); }

void require_same_shape(const Matrix& a, const Matrix& b, std::string_view op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

// The i-k-j loop order skips zero entries of `a`, which makes products with
// bag-of-words feature matrices cheap without a separate sparse path.
Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_str(a) + " * " + shape_str(b));
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for_row_blocks(a.rows(), a.cols() * n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double* orow = out.row(i).data();
      const auto arow = a.row(i);
      for (std::size_t k = 0; k < arow.size(); ++k) {
        const double av = arow[k];
        if (av == 0.0) continue;
        const double* brow = b.row(k).data();
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  });
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: " + shape_str(a) + "^T * " + shape_str(b));
  }
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  // Output row i accumulates a(k,i) * b(k,:) over k in a fixed order.
  for_row_blocks(a.cols(), a.rows() * n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = 0; k < a.rows(); ++k) {
      const auto arow = a.row(k);
      const double* brow = b.row(k).data();
      for (std::size_t i = begin; i < end; ++i) {
        const double av = arow[i];
        if (av == 0.0) continue;
        double* orow = out.row(i).data();
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  });
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + shape_str(a) + " * " + shape_str(b) + "^T");
  }
  Matrix out(a.rows(), b.rows());
  const std::size_t inner = a.cols();
  for_row_blocks(a.rows(), b.rows() * inner, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const double* arow = a.row(i).data();
      for (std::size_t j = 0; j < b.rows(); ++j) {
        const double* brow = b.row(j).data();
        double s = 0.0;
        for (std::size_t k = 0; k < inner; ++k) s += arow[k] * brow[k];
        out(i, j) = s;
      }
    }
  });
  return out;
}

Matrix spmm(const CsrMatrix& s, const Matrix& b) {
  if (s.cols != b.rows()) {
    throw DimensionError("spmm: sparse " + std::to_string(s.rows) + "x" +
                         std::to_string(s.cols) + " * " + shape_str(b));
  }
  Matrix out(s.rows, b.cols());
  const std::size_t n = b.cols();
  for (std::size_t r = 0; r < s.rows; ++r) {
    double* orow = out.row(r).data();
    for (std::size_t p = s.offsets[r]; p < s.offsets[r + 1]; ++p) {
      const double v = s.values[p];
      const double* brow = b.row(s.indices[p]).data();
      for (std::size_t j = 0; j < n; ++j) orow[j] += v * brow[j];
    }
  }
  return out;
}

Matrix spmm_t(const CsrMatrix& s, const Matrix& b) {
  if (s.rows != b.rows()) {
    throw DimensionError("spmm_t: sparse^T " + std::to_string(s.cols) + "x" +
                         std::to_string(s.rows) + " * " + shape_str(b));
  }
  Matrix out(s.cols, b.cols());
  const std::size_t n = b.cols();
  for (std::size_t r = 0; r < s.rows; ++r) {
    const double* brow = b.row(r).data();
    for (std::size_t p = s.offsets[r]; p < s.offsets[r + 1]; ++p) {
      const double v = s.values[p];
      double* orow = out.row(s.indices[p]).data();
      for (std::size_t j = 0; j < n; ++j) orow[j] += v * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  out += b;
  return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  out -= b;
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return out;
}

Matrix scaled(const Matrix& a, double s) {
  Matrix out = a;
  out *= s;
  return out;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto in = m.row(r);
    auto o = out.row(r);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (double& v : o) v /= total;
  }
  return out;
}

Matrix row_sums(const Matrix& m) {
  Matrix out(m.rows(), 1);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (double v : m.row(r)) s += v;
    out(r, 0) = s;
  }
  return out;
}

Matrix col_sums(const Matrix& m) {
  Matrix out(1, m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto in = m.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) out(0, c) += in[c];
  }
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows()) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(m.row(rows[i]).begin(), m.cols(), out.row(i).begin());
  }
  return out;
}

double frobenius_sq(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return s;
}

double frobenius_norm(const Matrix& m) { return std::sqrt(frobenius_sq(m)); }

double max_abs(const Matrix& m) {
  double mx = 0.0;
  for (double v : m.values()) mx = std::max(mx, std::abs(v));
  return mx;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double mx = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    mx = std::max(mx, std::abs(a.values()[i] - b.values()[i]));
  }
  return mx;
}

double orthonormality_residual(const Matrix& m) {
  Matrix g = matmul_tn(m, m);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
  return frobenius_norm(g);
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](double v) { return std::isfinite(v); });
}

void require_finite(const Matrix& m, std::string_view where) {
  if (!all_finite(m)) {
    throw NumericalError("non-finite value produced by " + std::string(where));
  }
}

}  // namespace geoformer
