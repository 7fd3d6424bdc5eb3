#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace evoqf {

enum class ErrorCode {
  ShapeMismatch,
  UnknownKind,
  NotScalarLoss,
  DetachedLoss,
  NonFiniteOutput,
  NonFiniteInput,
  DuplicateModality,
  UnknownModality,
  BadConfig,
  EmptyFeatures,
  DuplicateAdapter,
  RankTooLarge,
  UnknownAdapter,
  WrongModalityCount,
  UnsupportedArity,
  LengthMismatch,
  NonPositiveTime,
  NoPermissiblePairs,
  EmptyInput,
  MissingModalityInCohort,
  LineageMismatch,
  BadManifest,
  CorruptFile,
  VersionMismatch,
  BadArgs,
  ConfigInvalid,
  DataError,
  NumericalFailure,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace evoqf
