#pragma once

#include <stdexcept>
#include <string>

namespace omg {

// Numeric values double as C API status codes and CLI exit codes.
enum class ErrorCode : int {
  kOk = 0,
  kInvalidArgument = 1,
  kConfig = 2,
  kData = 3,
  kDiverged = 4,
  kCheckpointMismatch = 5,
  kUnknownPrompt = 6,
  kIo = 7,
  kBadMagic = 8,
  kDimensionMismatch = 9,
  kNonFiniteValue = 10,
  kEmptyDataset = 11,
  kLayoutMismatch = 12,
  kShapeMismatch = 13,
  kScheduleOutOfRange = 14,
  kOddHeadDim = 15,
  kLengthExceeded = 16,
  kNonFiniteActivation = 17,
  kLayoutMissingFeet = 18,
  kTokenOverflow = 19,
  kEmptyPrompt = 20,
  kTooFewSamples = 21,
  kZeroVector = 22,
  kInternal = 99,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace omg
