#pragma once

#include <stdexcept>
#include <string>

namespace geoformer {

/// Base class of every error raised by the library. Callers that only need
/// to report a failure can catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not chain.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition (non-scalar loss, empty mask...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A point or tangent vector lies outside the chart of its curvature.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Mobius addition hit a vanishing denominator.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// QR / SVD input is numerically rank deficient.
class RankError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced where finite values are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset directory is missing files or holds inconsistent content.
class LoadError : public Error {
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

}  // namespace geoformer
