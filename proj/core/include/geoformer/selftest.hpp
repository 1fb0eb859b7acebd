#pragma once

// Invariant suites shared by the CLI `selftest` command and the acceptance tests.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "geoformer/backbone.hpp"
#include "geoformer/gradcheck.hpp"
#include "geoformer/model.hpp"

namespace geoformer {

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct SuiteResult {
  std::string suite;
  std::vector<CheckResult> checks;
  /// Per-parameter gradient errors (gradcheck suite only).
  std::vector<GradRecord> gradients;
  double seconds = 0.0;

  bool passed() const;
  /// First failing check, or nullptr.
  const CheckResult* first_failure() const;
};

using AttentionKernel = std::function<Matrix(const AttentionInputs&)>;

/// Σ_j (1 + q̂_i·k̂_j) v_j / Σ_j (1 + q̂_i·k̂_j), blended with β·v_i. O(N²).
Matrix quadratic_attention(const AttentionInputs& inp);

/// exp0/log0 round trip, flat-limit continuity and the Möbius example.
SuiteResult run_geometry_suite(std::uint64_t seed = 0);
/// Stiefel and Grassmann projection orthonormality and projector invariance.
SuiteResult run_projection_suite(std::uint64_t seed = 0);
/// Factored attention against the quadratic oracle.
SuiteResult run_attention_suite(std::uint64_t seed = 0,
                                const AttentionKernel& kernel = static_cast<Matrix (*)(const AttentionInputs&)>(
                                    &linear_attention));

/// 30-node synthetic graph and the configuration the gradient check uses.
struct GradcheckProblem {
  Graph graph;
  SplitMasks masks;
  TrainConfig config;
  ModelParams params;
};

GradcheckProblem make_gradcheck_problem(Variant variant, std::uint64_t seed = 0);

/// Central differences (step 1e-5) of the full composite loss.
std::vector<GradRecord> gradcheck_model(const GradcheckProblem& problem, double step = 1e-5);

/// Full rmoe model (K = 3, κ ∈ {−1, 0, 1}) plus the exact projection adjoints.
SuiteResult run_gradcheck_suite(std::uint64_t seed = 0);

/// Human-readable report: one line per check, plus the gradient table.
std::string format_suite(const SuiteResult& result);

}  // namespace geoformer
