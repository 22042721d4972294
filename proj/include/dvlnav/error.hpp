#pragma once

#include <stdexcept>
#include <string>

namespace dvlnav {

enum class ErrorCode {
  PolarSingularity,
  GimbalLock,
  DegenerateVectors,
  CoplanarPoints,
  StepTooLarge,
  InvalidPlan,
  SegmentTooShort,
  StreamGap,
  InsufficientExcitation,
  NoExcitation,
  InsufficientTurning,
  NoTypeISegments,
  TimebaseMismatch,
  UnknownFigure,
  InvalidConfig,
  ParseError,
  InnovationGateExceeded,
  FileNotFound,
  IoError,
};

const char* to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so that
/// callers (and the CLI exit-code mapping) can branch on the kind of failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// Input/config problems map to exit code 1, numerical ones to 2.
  bool is_validation() const noexcept {
    return code_ == ErrorCode::InvalidConfig || code_ == ErrorCode::ParseError ||
           code_ == ErrorCode::UnknownFigure || code_ == ErrorCode::FileNotFound || code_ == ErrorCode::InvalidPlan ||
           code_ == ErrorCode::TimebaseMismatch;
  }

 private:
  ErrorCode code_;
};

}  // namespace dvlnav
