#include "geoformer/params.hpp"

#include "geoformer/error.hpp"

namespace geoformer {

void ModelParams::add(const std::string& name, Matrix value, ParamKind kind, double kappa) {
  if (!entries_.emplace(name, Param{std::move(value), kind, kappa}).second) {
    throw ContractError("duplicate parameter name '" + name + "'");
  }
}

const Param& ModelParams::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

Param& ModelParams::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : entries_) n += p.value.size();
  return n;
}

bool operator==(const Param& a, const Param& b) {
  return a.kind == b.kind && a.kappa == b.kappa && a.value == b.value;
}

bool operator==(const ModelParams& a, const ModelParams& b) { return a.entries_ == b.entries_; }

BoundParams::BoundParams(Tape& tape, const ModelParams& params) : params_(&params) {
  for (const auto& [name, p] : params) vars_.emplace(name, tape.parameter(name, p.value));
}

const Var& BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("parameter '" + name + "' is not bound");
  return it->second;
}

}  // namespace geoformer
