#pragma once

// Adam for Euclidean parameters and Riemannian Adam for parameters flagged as
// kappa-stereographic points or Stiefel matrices.

#include <cstdint>
#include <map>
#include <string>

#include "geoformer/autodiff.hpp"
#include "geoformer/params.hpp"

namespace geoformer {

struct AdamHyper {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct Moments {
  Matrix m;
  Matrix u;
  friend bool operator==(const Moments&, const Moments&) = default;
};

struct OptimState {
  AdamHyper hyper;
  std::uint64_t t = 0;
  std::map<std::string, Moments> moments;
};

bool operator==(const OptimState& a, const OptimState& b);

/// Zero moments shaped like every parameter.
OptimState make_optim_state(const ModelParams& params, AdamHyper hyper);

/// One bias-corrected Adam step over the Euclidean parameters only.
void adam_step(OptimState& state, ModelParams& params, const Gradients& grads);

/// One Riemannian Adam step over the manifold-flagged parameters only.
void riemannian_adam_step(OptimState& state, ModelParams& params, const Gradients& grads);

/// Adam on Euclidean parameters and Riemannian Adam on the rest, sharing one
/// step counter. With `riemannian` false every parameter takes a Euclidean
/// step and stereographic points are projected back into their domain.
void optimizer_step(OptimState& state, ModelParams& params, const Gradients& grads,
                    bool riemannian = true);

std::string serialize_optim_state(const OptimState& state);
OptimState deserialize_optim_state(const std::string& text);

}  // namespace geoformer
