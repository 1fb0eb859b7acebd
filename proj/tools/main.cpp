#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "commands.hpp"

namespace {

geoformer::cli::TrainOptions to_options(const std::string& config, const std::string& data,
                                        const std::string& out, const std::optional<std::uint64_t>& seed) {
  geoformer::cli::TrainOptions o;
  if (!config.empty()) o.config = config;
  if (!data.empty()) o.data = data;
  if (!out.empty()) o.out = out;
  o.seed = seed;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = geoformer::cli;
  CLI::App app{"geoformer: geometry-aware graph transformers for node classification"};
  app.require_subcommand(1);
  app.footer(cli::config_reference() +
             "\nExit codes: 0 ok, 1 self-test failure, 2 config error, 3 data error, 4 numerical abort.\n"
             "GEOFORMER_THREADS caps kernel threads (default 1).");

  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("--config", config, "Config JSON file");
    sub->add_option("--data", data, "Dataset directory");
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--seed", seed, "Seed override");
  };

  CLI::App* train = app.add_subcommand("train", "Train a model and write metrics, history and weights");
  add_common(train, true);

  CLI::App* eval = app.add_subcommand("eval", "Evaluate <out>/model.json on a dataset");
  add_common(eval, true);

  std::string kind;
  std::string params;
  std::uint64_t gen_seed = 0;
  CLI::App* generate = app.add_subcommand("generate", "Write a synthetic dataset directory");
  generate->add_option("--kind", kind, "tree | sbm | clique_ring")->required();
  generate->add_option("--params", params, "Generator parameters (inline JSON or file)");
  generate->add_option("--seed", gen_seed, "Seed");
  generate->add_option("--out", out, "Output directory")->required();

  std::string suite;
  CLI::App* selftest = app.add_subcommand("selftest", "Run an invariant suite");
  selftest->add_option("--suite", suite, "geometry | attention | gradcheck")->required();

  std::string grid;
  CLI::App* sweep = app.add_subcommand("sweep", "Grid sweep over config keys");
  add_common(sweep, true);
  sweep->add_option("--grid", grid, "Grid JSON: {key: [values...]}")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kExitConfig;
  }

  if (*train) return cli::cmd_train(to_options(config, data, out, seed), std::cout, std::cerr);
  if (*eval) return cli::cmd_eval(to_options(config, data, out, seed), std::cout, std::cerr);
  if (*generate) return cli::cmd_generate(kind, params, gen_seed, out, std::cout, std::cerr);
  if (*selftest) return cli::cmd_selftest(suite, std::cout, std::cerr);
  if (*sweep) return cli::cmd_sweep(to_options(config, data, out, seed), grid, std::cout, std::cerr);
  return cli::kExitConfig;
}
