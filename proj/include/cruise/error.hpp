#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cruise {

enum class ErrorCode {
  kDegenerateSpeed,
  kInstability,
  kConfig,
  kParameter,
  kRange,
  kInfeasibleManeuver,
  kShapeMismatch,
  kStepSize,
  kIo,
  kMissingArtifact,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDegenerateSpeed: return "degenerate_speed";
    case ErrorCode::kInstability: return "instability";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kParameter: return "parameter";
    case ErrorCode::kRange: return "range";
    case ErrorCode::kInfeasibleManeuver: return "infeasible_maneuver";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kStepSize: return "step_size";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kMissingArtifact: return "missing_artifact";
  }
  return "unknown";
}

/// Single exception type for the library; `code()` is what callers branch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cruise
