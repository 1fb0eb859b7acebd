#pragma once

#include <functional>
#include <string>
#include <vector>

#include "geoformer/autodiff.hpp"
#include "geoformer/params.hpp"

namespace geoformer {

struct GradRecord {
  std::string param_name;
  Matrix analytic;
  Matrix numeric;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

/// Records the loss for the given parameter values on a fresh tape.
/// Must be deterministic.
using LossBuilder = std::function<Var(Tape&, const ModelParams&)>;

/// Relative error with the denominator floored at 1e-8.
double relative_error(double analytic, double numeric);

/// Central differences (f(θ+h·e) − f(θ−h·e)) / 2h for every scalar entry,
/// compared against the supplied analytic gradients.
std::vector<GradRecord> compare_gradients(const ModelParams& params, const Gradients& analytic,
                                          const LossBuilder& loss, double step);

/// Runs backward once for the analytic gradient, then compare_gradients.
std::vector<GradRecord> grad_check(const ModelParams& params, const LossBuilder& loss,
                                   double step);

double worst_error(const std::vector<GradRecord>& records);

/// Largest relative error among entries whose absolute error is at least
/// `abs_floor`. Entries below the floor sit at the roundoff level of the
/// central difference and carry no information about the gradient.
double worst_error_above(const std::vector<GradRecord>& records, double abs_floor);

}  // namespace geoformer
