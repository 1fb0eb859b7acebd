#pragma once

// Tape-based reverse-mode differentiation over dense matrices.
//
// A Tape records every intermediate value of one forward evaluation. Leaves
// are constants or named parameters; Tape::backward seeds a 1x1 loss with 1
// and returns the gradient of the loss for every parameter name.

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "geoformer/matrix.hpp"

namespace geoformer {

class Tape;

/// Handle to a node of a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using Gradients = std::map<std::string, Matrix>;

class Tape {
 public:
  /// Receives the gradient flowing into the node and must route it to the
  /// node's inputs through Tape::accumulate.
  using BackwardFn = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Registers a trainable leaf. Registering the same name twice accumulates
  /// both uses into one gradient.
  Var parameter(std::string name, Matrix value);

  /// Appends a derived node. `op` names the operation in error messages.
  Var push(Matrix value, std::vector<Var> inputs, BackwardFn backward, std::string_view op);

  const Matrix& value(const Var& v) const { return nodes_[v.id()].value; }
  bool needs_grad(const Var& v) const { return nodes_[v.id()].needs_grad; }

  /// Adds `g` to the gradient slot of `target` (no-op for constants).
  void accumulate(const Var& target, const Matrix& g);
  void accumulate(const Var& target, Matrix&& g);

  Gradients backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    std::string param_name;
    bool needs_grad = false;
    bool is_param = false;
  };

  std::deque<Node> nodes_;  // stable addresses: value() references survive later pushes
};

/// Elementwise scalar function returning (value, derivative).
using ScalarFn = std::function<std::pair<double, double>(double)>;

namespace ad {

Var matmul(const Var& a, const Var& b);
/// Constant sparse left factor: s·b.
Var spmm(const CsrMatrix& s, const Var& b);
Var transpose(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var divide(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);

/// Repeats a 1xd row `rows` times.
Var broadcast_rows(const Var& row, std::size_t rows);
/// Repeats an nx1 column `cols` times.
Var broadcast_cols(const Var& col, std::size_t cols);
/// Multiplies every row i of `a` by the scalar col(i,0).
Var scale_rows(const Var& a, const Var& col);

Var row_sum(const Var& a);
Var col_sum(const Var& a);
Var sum(const Var& a);
Var row_dot(const Var& a, const Var& b);

Var map(const Var& a, ScalarFn fn, std::string_view op);
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var log(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
/// ln(1 + e^x), evaluated stably.
Var softplus(const Var& a);

/// Divides each row by max(‖row‖, eps).
Var row_normalize(const Var& a, double eps = 1e-12);
Var softmax_rows(const Var& a);
/// Squared Frobenius norm as a 1x1 node.
Var frobenius_sq(const Var& a);

Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
Var gather_rows(const Var& a, std::span<const std::size_t> rows);

/// Mean softmax cross-entropy over the listed rows. labels[r] is the class of
/// row r; only rows in `rows` contribute.
Var cross_entropy(const Var& logits, std::span<const int> labels,
                  std::span<const std::size_t> rows);

/// Forward value `projected`, gradient passed through unchanged.
Var straight_through(const Var& a, Matrix projected);

}  // namespace ad

inline Var operator+(const Var& a, const Var& b) { return ad::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ad::sub(a, b); }
inline Var operator*(double s, const Var& a) { return ad::scale(a, s); }

}  // namespace geoformer
