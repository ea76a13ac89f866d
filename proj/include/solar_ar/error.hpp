#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace solar_ar {

enum class ErrorCode {
  kInvalidArgument,
  kBehindCamera,
  kOutOfBounds,
  kDegenerate,
  kSingular,
  kWrongFormat,
  kTooSmall,
  kSourceStopped,
  kDecode,
  kParse,
  kDuplicateId,
  kRotationAmbiguity,
  kCyclicParent,
  kUnknownName,
  kProtocol,
  kIo,
  kMode,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kBehindCamera: return "behind_camera";
    case ErrorCode::kOutOfBounds: return "out_of_bounds";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kSingular: return "singular";
    case ErrorCode::kWrongFormat: return "wrong_format";
    case ErrorCode::kTooSmall: return "too_small";
    case ErrorCode::kSourceStopped: return "source_stopped";
    case ErrorCode::kDecode: return "decode";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kDuplicateId: return "duplicate_id";
    case ErrorCode::kRotationAmbiguity: return "rotation_ambiguity";
    case ErrorCode::kCyclicParent: return "cyclic_parent";
    case ErrorCode::kUnknownName: return "unknown_name";
    case ErrorCode::kProtocol: return "protocol";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kMode: return "mode";
  }
  return "unknown";
}

// Every failure in the library is reported as an Error carrying a code that
// tests and the wire server can switch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace solar_ar
