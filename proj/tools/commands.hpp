#pragma once

// Command implementations behind the `geoformer` executable. Each returns the
// process exit code: 0 ok, 1 self-test failure, 2 config error, 3 data error,
// 4 numerical abort.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "geoformer/model.hpp"
#include "geoformer/selftest.hpp"

namespace geoformer::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitSelftest = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

struct CliConfig {
  TrainConfig train;
  std::string data_dir;
  std::string out_dir;
};

/// Parses a config document. Unknown keys and ill-typed values throw
/// ConfigError naming the key.
CliConfig parse_config(const std::string& json_text);
CliConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const CliConfig& config);

/// Every accepted config key with its default, one per line (for --help).
std::string config_reference();

struct TrainOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainOptions& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const TrainOptions& opts, std::ostream& out, std::ostream& err);
int cmd_generate(const std::string& kind, const std::string& params, std::uint64_t seed,
                 const std::filesystem::path& out_dir, std::ostream& out, std::ostream& err);
int cmd_selftest(const std::string& suite, std::ostream& out, std::ostream& err,
                 const AttentionKernel* attention_kernel = nullptr);
int cmd_sweep(const TrainOptions& opts, const std::filesystem::path& grid, std::ostream& out,
              std::ostream& err);

}  // namespace geoformer::cli
