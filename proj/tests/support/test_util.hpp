#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "geoformer/matrix.hpp"
#include "geoformer/random.hpp"

namespace testutil {

inline geoformer::Matrix random_matrix(geoformer::Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  geoformer::Matrix m(r, c);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

inline void check_close(const geoformer::Matrix& a, const geoformer::Matrix& b, double tol) {
  REQUIRE(a.same_shape(b));
  CHECK(geoformer::max_abs_diff(a, b) <= tol);
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("geoformer_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
