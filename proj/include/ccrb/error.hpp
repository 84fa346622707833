#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ccrb {

enum class ErrorCode {
  kDimMismatch,
  kNonFinite,
  kNotSymmetric,
  kNotPsd,
  kNotOnSet,
  kNotTangent,
  kRankTolAmbiguous,
  kNoRetraction,
  kNoProjection,
  kNotProjector,
  kSingularJ,
  kDegenerateInput,
  kInvalidArgument,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kNotSymmetric: return "NotSymmetric";
    case ErrorCode::kNotPsd: return "NotPsd";
    case ErrorCode::kNotOnSet: return "NotOnSet";
    case ErrorCode::kNotTangent: return "NotTangent";
    case ErrorCode::kRankTolAmbiguous: return "RankTolAmbiguous";
    case ErrorCode::kNoRetraction: return "NoRetraction";
    case ErrorCode::kNoProjection: return "NoProjection";
    case ErrorCode::kNotProjector: return "NotProjector";
    case ErrorCode::kSingularJ: return "SingularJ";
    case ErrorCode::kDegenerateInput: return "DegenerateInput";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Exception carrying a machine-checkable error code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ccrb
