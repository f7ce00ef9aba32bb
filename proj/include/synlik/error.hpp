#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace synlik {

enum class ErrorKind {
  NonPositiveDefinite,
  UnsupportedDimension,
  NonFiniteDensity,
  Divergence,
  AllDivergent,
  InsufficientDraws,
  DegenerateMass,
  SingularAfterEscalation,
  NonFiniteWeight,
  InsufficientTail,
  DimensionMismatch,
  UnknownId,
  MissingCovariates,
  EmptyGrid,
  AllZeroLikelihood,
  SchemaError,
  ConsistencyError,
  NotIpdStudy,
  MissingBundle,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind);

// Every failure the library reports carries one of the kinds above so that
// callers (the sampler, the CLI exit-code mapping) can dispatch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace synlik
