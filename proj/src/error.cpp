#include "dvlnav/error.hpp"

namespace dvlnav {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::PolarSingularity: return "PolarSingularity";
    case ErrorCode::GimbalLock: return "GimbalLock";
    case ErrorCode::DegenerateVectors: return "DegenerateVectors";
    case ErrorCode::CoplanarPoints: return "CoplanarPoints";
    case ErrorCode::StepTooLarge: return "StepTooLarge";
    case ErrorCode::InvalidPlan: return "InvalidPlan";
    case ErrorCode::SegmentTooShort: return "SegmentTooShort";
    case ErrorCode::StreamGap: return "StreamGap";
    case ErrorCode::InsufficientExcitation: return "InsufficientExcitation";
    case ErrorCode::NoExcitation: return "NoExcitation";
    case ErrorCode::InsufficientTurning: return "InsufficientTurning";
    case ErrorCode::NoTypeISegments: return "NoTypeISegments";
    case ErrorCode::TimebaseMismatch: return "TimebaseMismatch";
    case ErrorCode::UnknownFigure: return "UnknownFigure";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InnovationGateExceeded: return "InnovationGateExceeded";
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace dvlnav
