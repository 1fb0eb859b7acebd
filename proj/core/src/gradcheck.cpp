#include "geoformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "geoformer/error.hpp"

namespace geoformer {

namespace {

double evaluate(const ModelParams& params, const LossBuilder& loss) {
  Tape tape;
  return loss(tape, params).value().scalar();
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

std::vector<GradRecord> compare_gradients(const ModelParams& params, const Gradients& analytic,
                                          const LossBuilder& loss, double step) {
  if (!(step > 0.0)) throw ContractError("grad_check: step must be positive");
  std::vector<GradRecord> records;
  ModelParams probe = params;
  for (const auto& [name, p] : params) {
    auto it = analytic.find(name);
    if (it == analytic.end()) {
      throw ContractError("grad_check: no analytic gradient for '" + name + "'");
    }
    require_same_shape(p.value, it->second, "grad_check " + name);
    GradRecord rec{name, it->second, Matrix(p.value.rows(), p.value.cols()), 0.0, 0.0};
    Matrix& slot = probe.value(name);
    for (std::size_t i = 0; i < slot.size(); ++i) {
      const double original = slot.values()[i];
      slot.values()[i] = original + step;
      const double up = evaluate(probe, loss);
      slot.values()[i] = original - step;
      const double down = evaluate(probe, loss);
      slot.values()[i] = original;
      rec.numeric.values()[i] = (up - down) / (2.0 * step);
      rec.max_rel_err = std::max(rec.max_rel_err,
                                 relative_error(rec.analytic.values()[i], rec.numeric.values()[i]));
      rec.max_abs_err =
          std::max(rec.max_abs_err, std::abs(rec.analytic.values()[i] - rec.numeric.values()[i]));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<GradRecord> grad_check(const ModelParams& params, const LossBuilder& loss,
                                   double step) {
  Tape tape;
  const Var l = loss(tape, params);
  const Gradients analytic = tape.backward(l);
  return compare_gradients(params, analytic, loss, step);
}

double worst_error(const std::vector<GradRecord>& records) {
  double worst = 0.0;
  for (const auto& r : records) worst = std::max(worst, r.max_rel_err);
  return worst;
}

double worst_error_above(const std::vector<GradRecord>& records, double abs_floor) {
  double worst = 0.0;
  for (const auto& r : records) {
    for (std::size_t i = 0; i < r.analytic.size(); ++i) {
      const double a = r.analytic.values()[i];
      const double n = r.numeric.values()[i];
      if (std::abs(a - n) >= abs_floor) worst = std::max(worst, relative_error(a, n));
    }
  }
  return worst;
}

}  // namespace geoformer
