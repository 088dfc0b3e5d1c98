#pragma once

#include <stdexcept>
#include <string>

namespace iwc {

// Every failure raised by the library carries one of these kinds so callers
// (the CLI in particular) can map them to exit codes without string matching.
enum class ErrorKind {
  kNonFiniteValue,
  kUnknownTreatmentLabel,
  kShapeMismatch,
  kDegenerateSplit,
  kLevelMissingInTrain,
  kSingularDesign,
  kDimensionMismatch,
  kEmptyTreatedGroup,
  kDomainError,
  kDegenerateSlope,
  kInvalidPath,
  kFactorizationFailure,
  kDegenerateScores,
  kConfigError,
  kAllTrueEffectsZero,
  kNoValidTriples,
  kDivisionByZero,
  kZeroDenominator,
  kInsufficientRepetitions,
  kParseError,
  kIoError,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace iwc
