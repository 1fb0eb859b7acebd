#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "geoformer/autodiff.hpp"
#include "geoformer/matrix.hpp"

namespace geoformer {

/// How the optimizer must treat a parameter.
enum class ParamKind {
  euclidean,
  /// Row vector(s) on a kappa-stereographic space; `kappa` holds the curvature.
  stereographic,
  /// Matrix with orthonormal columns.
  stiefel,
};

struct Param {
  Matrix value;
  ParamKind kind = ParamKind::euclidean;
  double kappa = 0.0;
};

/// Named registry of every trainable array. Names iterate in sorted order,
/// which fixes the order of serialization and gradient checks.
class ModelParams {
 public:
  using Map = std::map<std::string, Param>;

  void add(const std::string& name, Matrix value, ParamKind kind = ParamKind::euclidean,
           double kappa = 0.0);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Param& at(const std::string& name) const;
  Param& at(const std::string& name);
  const Matrix& value(const std::string& name) const { return at(name).value; }
  Matrix& value(const std::string& name) { return at(name).value; }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }
  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  Map entries_;
};

bool operator==(const Param& a, const Param& b);

/// Parameter leaves of one tape, looked up by name.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ModelParams& params);

  const Var& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  const ModelParams& source() const { return *params_; }

 private:
  const ModelParams* params_;
  std::map<std::string, Var> vars_;
};

}  // namespace geoformer
