#include "evoqf/error.hpp"

namespace evoqf {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownKind: return "UnknownKind";
    case ErrorCode::NotScalarLoss: return "NotScalarLoss";
    case ErrorCode::DetachedLoss: return "DetachedLoss";
    case ErrorCode::NonFiniteOutput: return "NonFiniteOutput";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::DuplicateModality: return "DuplicateModality";
    case ErrorCode::UnknownModality: return "UnknownModality";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::EmptyFeatures: return "EmptyFeatures";
    case ErrorCode::DuplicateAdapter: return "DuplicateAdapter";
    case ErrorCode::RankTooLarge: return "RankTooLarge";
    case ErrorCode::UnknownAdapter: return "UnknownAdapter";
    case ErrorCode::WrongModalityCount: return "WrongModalityCount";
    case ErrorCode::UnsupportedArity: return "UnsupportedArity";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NonPositiveTime: return "NonPositiveTime";
    case ErrorCode::NoPermissiblePairs: return "NoPermissiblePairs";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::MissingModalityInCohort: return "MissingModalityInCohort";
    case ErrorCode::LineageMismatch: return "LineageMismatch";
    case ErrorCode::BadManifest: return "BadManifest";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::BadArgs: return "BadArgs";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::DataError: return "DataError";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace evoqf
