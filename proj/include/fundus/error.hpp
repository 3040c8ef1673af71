#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fundus {

enum class ErrorCode {
  InvalidArgument,
  InvalidIntensity,
  NonSquareInput,
  InvalidGrade,
  EmptyClass,
  IndexOutOfRange,
  FilterTooLarge,
  WindowTooLarge,
  DenseBeforeFlatten,
  EmptyChain,
  UnknownBackbone,
  ShapeMismatch,
  SpecOrderViolation,
  EmptyDataset,
  NonFiniteLoss,
  UnpreprocessedInput,
  CheckpointMismatch,
  LengthMismatch,
  EmptyInput,
  DegenerateMarginals,
  MalformedCsv,
  NoValidRecords,
  ClassTooSmall,
  Io,
  Config,
};

std::string_view to_string(ErrorCode code);

// All library failures surface as this exception; `code()` is the stable
// machine-readable part, `what()` carries the human context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fundus
