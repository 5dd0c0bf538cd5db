#pragma once

#include <stdexcept>
#include <string>

namespace kdmp {

// Structured failure: every throw carries a stable code name plus a
// human-readable detail string, so callers can match on codes and the CLI
// can print something actionable.
enum class ErrorCode {
  ShapeMismatch,
  PlacementInfeasible,
  EmptyScene,
  SamplingExhausted,
  NoPlanFound,
  EmptyDataset,
  ConfigMismatch,
  NanLoss,
  NanGradient,
  BadFile,
  BadArgument,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::PlacementInfeasible: return "PlacementInfeasible";
    case ErrorCode::EmptyScene: return "EmptyScene";
    case ErrorCode::SamplingExhausted: return "SamplingExhausted";
    case ErrorCode::NoPlanFound: return "NoPlanFound";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::NanLoss: return "NanLoss";
    case ErrorCode::NanGradient: return "NanGradient";
    case ErrorCode::BadFile: return "BadFile";
    case ErrorCode::BadArgument: return "BadArgument";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace kdmp
