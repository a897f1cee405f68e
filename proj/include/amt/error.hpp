#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace amt {

enum class ErrorCode {
  kIo,
  kFormat,
  kInvalidArgument,
  kShapeMismatch,
  kCalibration,
  kNumerical,
  kParse,
};

std::string_view error_code_name(ErrorCode code);

// Every failure the library reports is an amt::Error; the code is what the
// CLI serializes into its machine-readable error object.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace amt
