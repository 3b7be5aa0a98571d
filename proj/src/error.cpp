#include "omg/error.hpp"

namespace omg {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kOk: return "Ok";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kConfig: return "ConfigError";
    case ErrorCode::kData: return "DataError";
    case ErrorCode::kDiverged: return "NumericDivergence";
    case ErrorCode::kCheckpointMismatch: return "CheckpointMismatch";
    case ErrorCode::kUnknownPrompt: return "UnknownPrompt";
    case ErrorCode::kIo: return "IoFailure";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kLayoutMismatch: return "LayoutMismatch";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kScheduleOutOfRange: return "ScheduleOutOfRange";
    case ErrorCode::kOddHeadDim: return "OddHeadDim";
    case ErrorCode::kLengthExceeded: return "LengthExceeded";
    case ErrorCode::kNonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::kLayoutMissingFeet: return "LayoutMissingFeet";
    case ErrorCode::kTokenOverflow: return "TokenOverflow";
    case ErrorCode::kEmptyPrompt: return "EmptyPrompt";
    case ErrorCode::kTooFewSamples: return "TooFewSamples";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kInternal: return "Internal";
  }
  return "Unknown";
}

}  // namespace omg
