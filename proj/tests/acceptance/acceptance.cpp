// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "geoformer/manifolds.hpp"
#include "geoformer/model.hpp"
#include "geoformer/optim.hpp"
#include "geoformer/random.hpp"
#include "geoformer/selftest.hpp"

using namespace geoformer;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const Outcome& o) {
  std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

void run(int id, const std::function<Outcome()>& body) {
  try {
    report(id, body());
  } catch (const std::exception& e) {
    report(id, {false, std::string("exception: ") + e.what()});
  }
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome suite_outcome(const SuiteResult& r, double budget) {
  const CheckResult* f = r.first_failure();
  std::string detail = fmt("%zu checks in %.2f s", r.checks.size(), r.seconds);
  if (budget > 0.0) detail += fmt(" (budget %.0f s)", budget);
  if (f) detail += fmt("; %s: error %.3g > %.3g", f->name.c_str(), f->max_error, f->tolerance);
  return {r.passed() && (budget <= 0.0 || r.seconds < budget), detail};
}

std::optional<fs::path> cora_dir() {
  std::vector<fs::path> candidates;
  if (const char* env = std::getenv("GEOFORMER_CORA_DIR")) candidates.emplace_back(env);
  candidates.push_back(fs::path(GEOFORMER_SOURCE_DIR) / "data" / "cora");
  for (const fs::path& p : candidates) {
    if (fs::exists(p / "meta.json")) return p;
  }
  return std::nullopt;
}

const char* kNoCora =
    "Cora dataset not found (set GEOFORMER_CORA_DIR or place it in data/cora; "
    "tools/export_planetoid.py converts the Planetoid files)";

TrainConfig cora_config(Variant v, std::uint64_t seed) {
  TrainConfig c;
  c.variant = v;
  c.seed = seed;
  c.epochs = 300;
  c.hidden_dim = 64;
  c.lr = 0.01;
  c.dropout = 0.5;
  c.weight_decay = 5e-4;
  c.patience = 300;
  return c;
}

// Two-layer GCN: the base model with the attention branch switched off.
TrainConfig gcn_config(std::uint64_t seed) {
  TrainConfig c = cora_config(Variant::base, seed);
  c.alpha = 1.0;
  return c;
}

double mean_test_accuracy(const Graph& g, const SplitMasks& m, const std::function<TrainConfig(std::uint64_t)>& cfg) {
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) sum += train(cfg(seed), g, m).test.accuracy;
  return sum / 5.0;
}

Outcome criterion_optimizer() {
  std::vector<std::string> problems;

  // Adam on ‖w − target‖².
  Rng rng(10);
  Matrix target(3, 4);
  for (double& v : target.values()) v = rng.normal();
  ModelParams p;
  p.add("w", Matrix(3, 4));
  OptimState s = make_optim_state(p, AdamHyper{0.01});
  int steps = 0;
  while (max_abs_diff(p.value("w"), target) >= 1e-4 && steps < 2000) {
    Tape tape;
    const BoundParams b(tape, p);
    adam_step(s, p, tape.backward(ad::frobenius_sq(ad::sub(b["w"], tape.constant(target)))));
    ++steps;
  }
  if (max_abs_diff(p.value("w"), target) >= 1e-4) problems.push_back("adam did not converge in 2000 steps");

  // Riemannian Adam under large random gradients.
  std::size_t escapes = 0;
  for (double kv : {-1.0, -3.0}) {
    ModelParams q;
    q.add("b", Matrix(2, 5), ParamKind::stereographic, kv);
    q.add("U", stiefel_project(Matrix{{1, 0}, {0, 1}, {1, 1}, {0, 2}}).mat(), ParamKind::stiefel);
    OptimState sq = make_optim_state(q, AdamHyper{0.5});
    for (int i = 0; i < 1000; ++i) {
      Gradients g;
      Matrix gb(2, 5), gu(4, 2);
      for (double& v : gb.values()) v = 100.0 * rng.normal();
      for (double& v : gu.values()) v = rng.normal();
      g.emplace("b", gb);
      g.emplace("U", gu);
      riemannian_adam_step(sq, q, g);
      for (std::size_t r = 0; r < 2; ++r) {
        if (!in_domain(Curvature(kv), q.value("b").row(r))) ++escapes;
      }
      if (orthonormality_residual(q.value("U")) > 1e-8) ++escapes;
    }
  }
  if (escapes > 0) problems.push_back(fmt("%zu out-of-domain iterates", escapes));

  // κ = 0 update direction.
  double worst_dir = 0.0;
  ModelParams flat, euc;
  Matrix init(1, 6);
  for (double& v : init.values()) v = 0.3 * rng.normal();
  flat.add("b", init, ParamKind::stereographic, 0.0);
  euc.add("b", init);
  OptimState sf = make_optim_state(flat, AdamHyper{0.01});
  OptimState se = make_optim_state(euc, AdamHyper{0.01});
  for (int i = 0; i < 20; ++i) {
    Matrix g(1, 6);
    for (double& v : g.values()) v = rng.normal();
    const Matrix bf = flat.value("b");
    const Matrix be = euc.value("b");
    Gradients gf, ge;
    gf.emplace("b", g);
    ge.emplace("b", g);
    riemannian_adam_step(sf, flat, gf);
    adam_step(se, euc, ge);
    const Matrix df = sub(flat.value("b"), bf);
    const Matrix de = sub(euc.value("b"), be);
    worst_dir = std::max(worst_dir, max_abs_diff(scaled(df, 1.0 / frobenius_norm(df)),
                                                 scaled(de, 1.0 / frobenius_norm(de))));
  }
  if (worst_dir >= 1e-6) problems.push_back(fmt("kappa=0 direction differs by %.3g", worst_dir));

  std::string detail = fmt("adam %d steps; radam 1000 steps per kappa in {-1,-3}, %zu escapes; kappa=0 direction diff %.2g", steps,
                           escapes, worst_dir);
  for (const std::string& pr : problems) detail += "; " + pr;
  return {problems.empty(), detail};
}

Outcome criterion_determinism() {
  const fs::path root = fs::temp_directory_path() / "geoformer_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  std::ostringstream out, err;
  if (cli::cmd_generate("sbm", "", 1, root / "data", out, err) != cli::kExitOk) return {false, err.str()};
  std::ofstream(root / "config.json") << R"({"variant":"rmoe","epochs":30,"hidden_dim":16,"expert_dim":8})";
  for (const char* run_name : {"a", "b"}) {
    const cli::TrainOptions opts{root / "config.json", root / "data", root / run_name, 7};
    if (cli::cmd_train(opts, out, err) != cli::kExitOk) return {false, err.str()};
  }
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const bool metrics = slurp(root / "a" / "metrics.json") == slurp(root / "b" / "metrics.json");
  const bool history = slurp(root / "a" / "history.csv") == slurp(root / "b" / "history.csv");
  return {metrics && history, fmt("metrics.json %s, history.csv %s", metrics ? "identical" : "DIFFER",
                                  history ? "identical" : "DIFFER")};
}

Outcome criterion_mixed_curvature() {
  double mixed = 0.0, single = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SyntheticParams sp;
    sp.kind = SyntheticKind::tree;
    sp.branching = 2;
    sp.depth = 6;
    const auto [g, masks] = generate_synthetic(sp, seed);
    TrainConfig c;
    c.seed = seed;
    c.lr = 0.01;
    c.epochs = 300;
    c.num_experts = 3;
    c.curvatures = {-1.0, 0.0, 1.0};
    c.expert_dim = 4;
    mixed += train_link_reconstruction(c, g).final_loss / 5.0;
    c.num_experts = 1;
    c.curvatures = {0.0};
    c.expert_dim = 12;
    single += train_link_reconstruction(c, g).final_loss / 5.0;
  }
  return {mixed < single, fmt("mean link loss: 3 experts {-1,0,1} x 4 dims %.4f vs 1 flat expert x 12 dims %.4f",
                              mixed, single)};
}

}  // namespace

int main() {
  run(1, [] { return suite_outcome(run_geometry_suite(), 5.0); });
  run(2, [] { return suite_outcome(run_projection_suite(), 0.0); });
  run(3, [] { return suite_outcome(run_attention_suite(), 5.0); });
  run(4, [] {
    // Strict per-parameter bound on the rmoe model, no absolute floor.
    const SuiteResult r = run_gradcheck_suite();
    double worst = 0.0;
    std::size_t count = 0;
    std::string worst_name;
    for (const GradRecord& g : r.gradients) {
      if (g.param_name.rfind("rmoe/", 0) != 0) continue;
      ++count;
      if (g.max_rel_err >= worst) {
        worst = g.max_rel_err;
        worst_name = g.param_name;
      }
    }
    Outcome o = suite_outcome(r, 120.0);
    o.pass = o.pass && count > 0 && worst < 1e-4;
    o.detail += fmt("; rmoe: %zu parameters, worst max_rel_err %.3g (%s)", count, worst, worst_name.c_str());
    return o;
  });

  const std::optional<fs::path> cora = cora_dir();
  std::optional<std::pair<Graph, SplitMasks>> data;
  if (cora) data = load_graph(*cora);

  run(5, [&]() -> Outcome {
    if (!data) return {false, kNoCora};
    const auto t0 = std::chrono::steady_clock::now();
    const RunArtifacts r = train(gcn_config(0), data->first, data->second);
    const double secs = seconds_since(t0);
    return {r.test.accuracy >= 0.75 && secs <= 600.0,
            fmt("GCN test accuracy %.4f (need >= 0.75) in %.1f s", r.test.accuracy, secs)};
  });
  run(6, [&]() -> Outcome {
    if (!data) return {false, kNoCora};
    const double gcn = mean_test_accuracy(data->first, data->second, gcn_config);
    const double base = mean_test_accuracy(data->first, data->second,
                                           [](std::uint64_t s) { return cora_config(Variant::base, s); });
    const double stf = mean_test_accuracy(data->first, data->second,
                                          [](std::uint64_t s) { return cora_config(Variant::stiefel, s); });
    return {stf >= base - 0.005 && base >= gcn - 0.015,
            fmt("mean test accuracy: GCN %.4f, base %.4f, stiefel %.4f", gcn, base, stf)};
  });
  run(7, [&]() -> Outcome {
    if (!data) return {false, kNoCora};
    TrainConfig c = cora_config(Variant::stiefel, 0);
    c.lambda_orth = 0.0;
    const double free_resid = train(c, data->first, data->second).history.back().orth_residual;
    c.lambda_orth = 0.01;
    const double reg_resid = train(c, data->first, data->second).history.back().orth_residual;
    return {reg_resid < free_resid, fmt("final ||Y^T Y - I||_F: lambda 0.01 -> %.4f, lambda 0 -> %.4f", reg_resid,
                                        free_resid)};
  });
  run(8, criterion_mixed_curvature);
  run(9, criterion_determinism);
  run(10, criterion_optimizer);

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
