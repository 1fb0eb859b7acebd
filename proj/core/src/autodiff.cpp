#include "geoformer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "geoformer/error.hpp"

namespace geoformer {

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Matrix value) {
  require_finite(value, "constant");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(std::string name, Matrix value) {
  require_finite(value, "parameter " + name);
  Node n;
  n.value = std::move(value);
  n.param_name = std::move(name);
  n.needs_grad = true;
  n.is_param = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Matrix value, std::vector<Var> inputs, BackwardFn backward, std::string_view op) {
  require_finite(value, op);
  Node n;
  n.value = std::move(value);
  n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [this](const Var& v) {
    if (v.tape_ != this) throw ContractError("operand recorded on a different tape");
    return nodes_[v.id()].needs_grad;
  });
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(const Var& target, const Matrix& g) {
  Node& n = nodes_[target.id()];
  if (!n.needs_grad) return;
  if (n.grad.empty()) {
    require_same_shape(n.value, g, "accumulate");
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::accumulate(const Var& target, Matrix&& g) {
  Node& n = nodes_[target.id()];
  if (!n.needs_grad) return;
  if (n.grad.empty()) {
    require_same_shape(n.value, g, "accumulate");
    n.grad = std::move(g);
  } else {
    n.grad += g;
  }
}

Gradients Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw ContractError("backward: loss belongs to another tape");
  const Matrix& lv = nodes_[loss.id()].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward: loss must be 1x1, got " + std::to_string(lv.rows()) + "x" +
                        std::to_string(lv.cols()));
  }
  for (Node& n : nodes_) n.grad = Matrix();
  nodes_[loss.id()].grad = Matrix(1, 1, 1.0);

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }

  Gradients out;
  for (const Node& n : nodes_) {
    if (!n.is_param) continue;
    Matrix g = n.grad.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.grad;
    auto it = out.find(n.param_name);
    if (it == out.end()) {
      out.emplace(n.param_name, std::move(g));
    } else {
      it->second += g;
    }
  }
  return out;
}

namespace ad {

Var matmul(const Var& a, const Var& b) {
  Tape& t = a.tape();
  return t.push(geoformer::matmul(a.value(), b.value()), {a, b},
                [a, b](Tape& tape, const Matrix& g) {
                  if (tape.needs_grad(a)) tape.accumulate(a, matmul_nt(g, b.value()));
                  if (tape.needs_grad(b)) tape.accumulate(b, matmul_tn(a.value(), g));
                },
                "matmul");
}

Var spmm(const CsrMatrix& s, const Var& b) {
  Tape& t = b.tape();
  // The sparse operand must outlive the tape; callers keep it alongside.
  const CsrMatrix* sp = &s;
  return t.push(geoformer::spmm(s, b.value()), {b},
                [sp, b](Tape& tape, const Matrix& g) { tape.accumulate(b, spmm_t(*sp, g)); },
                "spmm");
}

Var transpose(const Var& a) {
  return a.tape().push(geoformer::transpose(a.value()), {a},
                       [a](Tape& tape, const Matrix& g) {
                         tape.accumulate(a, geoformer::transpose(g));
                       },
                       "transpose");
}

Var add(const Var& a, const Var& b) {
  return a.tape().push(geoformer::add(a.value(), b.value()), {a, b},
                       [a, b](Tape& tape, const Matrix& g) {
                         tape.accumulate(a, g);
                         tape.accumulate(b, g);
                       },
                       "add");
}

Var sub(const Var& a, const Var& b) {
  return a.tape().push(geoformer::sub(a.value(), b.value()), {a, b},
                       [a, b](Tape& tape, const Matrix& g) {
                         tape.accumulate(a, g);
                         if (tape.needs_grad(b)) tape.accumulate(b, scaled(g, -1.0));
                       },
                       "sub");
}

Var hadamard(const Var& a, const Var& b) {
  return a.tape().push(geoformer::hadamard(a.value(), b.value()), {a, b},
                       [a, b](Tape& tape, const Matrix& g) {
                         if (tape.needs_grad(a)) tape.accumulate(a, geoformer::hadamard(g, b.value()));
                         if (tape.needs_grad(b)) tape.accumulate(b, geoformer::hadamard(g, a.value()));
                       },
                       "hadamard");
}

Var divide(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "divide");
  Matrix out = a.value();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] /= bv[i];
  return a.tape().push(std::move(out), {a, b},
                       [a, b](Tape& tape, const Matrix& g) {
                         const auto av = a.value().values();
                         const auto bv2 = b.value().values();
                         if (tape.needs_grad(a)) {
                           Matrix ga = g;
                           for (std::size_t i = 0; i < ga.size(); ++i) ga.values()[i] /= bv2[i];
                           tape.accumulate(a, std::move(ga));
                         }
                         if (tape.needs_grad(b)) {
                           Matrix gb = g;
                           for (std::size_t i = 0; i < gb.size(); ++i) {
                             gb.values()[i] *= -av[i] / (bv2[i] * bv2[i]);
                           }
                           tape.accumulate(b, std::move(gb));
                         }
                       },
                       "divide");
}

Var scale(const Var& a, double s) {
  return a.tape().push(scaled(a.value(), s), {a},
                       [a, s](Tape& tape, const Matrix& g) { tape.accumulate(a, scaled(g, s)); },
                       "scale");
}

Var add_scalar(const Var& a, double s) {
  Matrix out = a.value();
  for (double& v : out.values()) v += s;
  return a.tape().push(std::move(out), {a},
                       [a](Tape& tape, const Matrix& g) { tape.accumulate(a, g); }, "add_scalar");
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var broadcast_rows(const Var& row, std::size_t rows) {
  if (row.rows() != 1) throw DimensionError("broadcast_rows: operand must have one row");
  Matrix out(rows, row.cols());
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(row.value().row(0).begin(), row.cols(), out.row(r).begin());
  }
  return row.tape().push(std::move(out), {row},
                         [row](Tape& tape, const Matrix& g) {
                           tape.accumulate(row, geoformer::col_sums(g));
                         },
                         "broadcast_rows");
}

Var broadcast_cols(const Var& col, std::size_t cols) {
  if (col.cols() != 1) throw DimensionError("broadcast_cols: operand must have one column");
  Matrix out(col.rows(), cols);
  for (std::size_t r = 0; r < col.rows(); ++r) {
    std::fill(out.row(r).begin(), out.row(r).end(), col.value()(r, 0));
  }
  return col.tape().push(std::move(out), {col},
                         [col](Tape& tape, const Matrix& g) {
                           tape.accumulate(col, geoformer::row_sums(g));
                         },
                         "broadcast_cols");
}

Var scale_rows(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw DimensionError("scale_rows: scale must be a column with one entry per row");
  }
  Matrix out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const double s = col.value()(r, 0);
    for (double& v : out.row(r)) v *= s;
  }
  return a.tape().push(std::move(out), {a, col},
                       [a, col](Tape& tape, const Matrix& g) {
                         if (tape.needs_grad(a)) {
                           Matrix ga = g;
                           for (std::size_t r = 0; r < ga.rows(); ++r) {
                             const double s = col.value()(r, 0);
                             for (double& v : ga.row(r)) v *= s;
                           }
                           tape.accumulate(a, std::move(ga));
                         }
                         if (tape.needs_grad(col)) {
                           Matrix gc(col.rows(), 1);
                           for (std::size_t r = 0; r < g.rows(); ++r) {
                             const auto gr = g.row(r);
                             const auto ar = a.value().row(r);
                             double s = 0.0;
                             for (std::size_t c = 0; c < gr.size(); ++c) s += gr[c] * ar[c];
                             gc(r, 0) = s;
                           }
                           tape.accumulate(col, std::move(gc));
                         }
                       },
                       "scale_rows");
}

Var row_sum(const Var& a) {
  const std::size_t cols = a.cols();
  return a.tape().push(geoformer::row_sums(a.value()), {a},
                       [a, cols](Tape& tape, const Matrix& g) {
                         Matrix ga(g.rows(), cols);
                         for (std::size_t r = 0; r < g.rows(); ++r) {
                           std::fill(ga.row(r).begin(), ga.row(r).end(), g(r, 0));
                         }
                         tape.accumulate(a, std::move(ga));
                       },
                       "row_sum");
}

Var col_sum(const Var& a) {
  const std::size_t rows = a.rows();
  return a.tape().push(geoformer::col_sums(a.value()), {a},
                       [a, rows](Tape& tape, const Matrix& g) {
                         Matrix ga(rows, g.cols());
                         for (std::size_t r = 0; r < rows; ++r) {
                           std::copy_n(g.row(0).begin(), g.cols(), ga.row(r).begin());
                         }
                         tape.accumulate(a, std::move(ga));
                       },
                       "col_sum");
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape().push(Matrix(1, 1, s), {a},
                       [a](Tape& tape, const Matrix& g) {
                         tape.accumulate(a, Matrix(a.rows(), a.cols(), g(0, 0)));
                       },
                       "sum");
}

Var row_dot(const Var& a, const Var& b) { return row_sum(hadamard(a, b)); }

Var map(const Var& a, ScalarFn fn, std::string_view op) {
  Matrix out(a.rows(), a.cols());
  Matrix deriv(a.rows(), a.cols());
  const auto in = a.value().values();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const auto [v, d] = fn(in[i]);
    out.values()[i] = v;
    deriv.values()[i] = d;
  }
  return a.tape().push(std::move(out), {a},
                       [a, deriv = std::move(deriv)](Tape& tape, const Matrix& g) {
                         tape.accumulate(a, geoformer::hadamard(g, deriv));
                       },
                       op);
}

Var relu(const Var& a) {
  return map(a, [](double x) { return x > 0.0 ? std::pair{x, 1.0} : std::pair{0.0, 0.0}; },
             "relu");
}

Var tanh(const Var& a) {
  return map(a,
             [](double x) {
               const double t = std::tanh(x);
               return std::pair{t, 1.0 - t * t};
             },
             "tanh");
}

Var sigmoid(const Var& a) {
  return map(a,
             [](double x) {
               const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                         : std::exp(x) / (1.0 + std::exp(x));
               return std::pair{s, s * (1.0 - s)};
             },
             "sigmoid");
}

Var log(const Var& a) {
  return map(a, [](double x) { return std::pair{std::log(x), 1.0 / x}; }, "log");
}

Var exp(const Var& a) {
  return map(a,
             [](double x) {
               const double e = std::exp(x);
               return std::pair{e, e};
             },
             "exp");
}

Var square(const Var& a) {
  return map(a, [](double x) { return std::pair{x * x, 2.0 * x}; }, "square");
}

Var sqrt(const Var& a) {
  return map(a,
             [](double x) {
               const double s = std::sqrt(x);
               return std::pair{s, 0.5 / s};
             },
             "sqrt");
}

Var softplus(const Var& a) {
  return map(a,
             [](double x) {
               const double v = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
               const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                         : std::exp(x) / (1.0 + std::exp(x));
               return std::pair{v, s};
             },
             "softplus");
}

Var row_normalize(const Var& a, double eps) {
  const Matrix& in = a.value();
  Matrix out = in;
  Matrix norms(in.rows(), 1);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    double s = 0.0;
    for (double v : in.row(r)) s += v * v;
    const double n = std::sqrt(s);
    norms(r, 0) = n;
    const double d = std::max(n, eps);
    for (double& v : out.row(r)) v /= d;
  }
  Matrix normalized = out;
  return a.tape().push(
      std::move(out), {a},
      [a, eps, norms = std::move(norms), normalized = std::move(normalized)](Tape& tape,
                                                                             const Matrix& g) {
        Matrix ga = g;
        for (std::size_t r = 0; r < ga.rows(); ++r) {
          const double n = norms(r, 0);
          auto gr = ga.row(r);
          if (n <= eps) {
            // Constant divisor: plain scaling.
            for (double& v : gr) v /= eps;
            continue;
          }
          const auto u = normalized.row(r);
          double dot = 0.0;
          for (std::size_t c = 0; c < gr.size(); ++c) dot += u[c] * gr[c];
          for (std::size_t c = 0; c < gr.size(); ++c) gr[c] = (gr[c] - u[c] * dot) / n;
        }
        tape.accumulate(a, std::move(ga));
      },
      "row_normalize");
}

Var softmax_rows(const Var& a) {
  Matrix out = geoformer::softmax_rows(a.value());
  Matrix probs = out;
  return a.tape().push(std::move(out), {a},
                       [a, probs = std::move(probs)](Tape& tape, const Matrix& g) {
                         Matrix ga(g.rows(), g.cols());
                         for (std::size_t r = 0; r < g.rows(); ++r) {
                           const auto p = probs.row(r);
                           const auto gr = g.row(r);
                           double dot = 0.0;
                           for (std::size_t c = 0; c < p.size(); ++c) dot += p[c] * gr[c];
                           auto o = ga.row(r);
                           for (std::size_t c = 0; c < p.size(); ++c) o[c] = p[c] * (gr[c] - dot);
                         }
                         tape.accumulate(a, std::move(ga));
                       },
                       "softmax_rows");
}

Var frobenius_sq(const Var& a) {
  return a.tape().push(Matrix(1, 1, geoformer::frobenius_sq(a.value())), {a},
                       [a](Tape& tape, const Matrix& g) {
                         tape.accumulate(a, scaled(a.value(), 2.0 * g(0, 0)));
                       },
                       "frobenius_sq");
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p.value().row(r).begin(), p.cols(), out.row(r).begin() + offset);
    }
    offset += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().tape().push(std::move(out), inputs,
                                   [inputs](Tape& tape, const Matrix& g) {
                                     std::size_t off = 0;
                                     for (const Var& p : inputs) {
                                       if (tape.needs_grad(p)) {
                                         Matrix gp(g.rows(), p.cols());
                                         for (std::size_t r = 0; r < g.rows(); ++r) {
                                           std::copy_n(g.row(r).begin() + off, p.cols(),
                                                       gp.row(r).begin());
                                         }
                                         tape.accumulate(p, std::move(gp));
                                       }
                                       off += p.cols();
                                     }
                                   },
                                   "concat_cols");
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) throw DimensionError("slice_cols: range exceeds columns");
  Matrix out(a.rows(), count);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy_n(a.value().row(r).begin() + begin, count, out.row(r).begin());
  }
  const std::size_t cols = a.cols();
  return a.tape().push(std::move(out), {a},
                       [a, begin, count, cols](Tape& tape, const Matrix& g) {
                         Matrix ga(g.rows(), cols);
                         for (std::size_t r = 0; r < g.rows(); ++r) {
                           std::copy_n(g.row(r).begin(), count, ga.row(r).begin() + begin);
                         }
                         tape.accumulate(a, std::move(ga));
                       },
                       "slice_cols");
}

Var gather_rows(const Var& a, std::span<const std::size_t> rows) {
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const std::size_t src_rows = a.rows();
  return a.tape().push(geoformer::gather_rows(a.value(), idx), {a},
                       [a, idx, src_rows](Tape& tape, const Matrix& g) {
                         Matrix ga(src_rows, g.cols());
                         for (std::size_t i = 0; i < idx.size(); ++i) {
                           auto dst = ga.row(idx[i]);
                           const auto src = g.row(i);
                           for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                         }
                         tape.accumulate(a, std::move(ga));
                       },
                       "gather_rows");
}

Var cross_entropy(const Var& logits, std::span<const int> labels,
                  std::span<const std::size_t> rows) {
  if (rows.empty()) throw ContractError("cross_entropy: empty row set");
  if (labels.size() != logits.rows()) {
    throw DimensionError("cross_entropy: one label per logits row required");
  }
  const Matrix& z = logits.value();
  Matrix probs(rows.size(), z.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= z.cols()) {
      throw ContractError("cross_entropy: row " + std::to_string(r) + " has no valid label");
    }
    const auto zr = z.row(r);
    const double mx = *std::max_element(zr.begin(), zr.end());
    double s = 0.0;
    for (double v : zr) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    total += lse - zr[static_cast<std::size_t>(y)];
    for (std::size_t c = 0; c < zr.size(); ++c) probs(i, c) = std::exp(zr[c] - lse);
  }
  const double n = static_cast<double>(rows.size());
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<int> lab(labels.begin(), labels.end());
  const std::size_t nrows = z.rows();
  return logits.tape().push(
      Matrix(1, 1, total / n), {logits},
      [logits, idx, lab, probs = std::move(probs), n, nrows](Tape& tape, const Matrix& g) {
        Matrix gl(nrows, probs.cols());
        const double s = g(0, 0) / n;
        for (std::size_t i = 0; i < idx.size(); ++i) {
          auto dst = gl.row(idx[i]);
          const auto p = probs.row(i);
          for (std::size_t c = 0; c < p.size(); ++c) dst[c] += s * p[c];
          dst[static_cast<std::size_t>(lab[idx[i]])] -= s;
        }
        tape.accumulate(logits, std::move(gl));
      },
      "cross_entropy");
}

Var straight_through(const Var& a, Matrix projected) {
  require_same_shape(a.value(), projected, "straight_through");
  return a.tape().push(std::move(projected), {a},
                       [a](Tape& tape, const Matrix& g) { tape.accumulate(a, g); },
                       "straight_through");
}

}  // namespace ad
}  // namespace geoformer
