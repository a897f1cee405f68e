#include "amt/error.hpp"

namespace amt {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kFormat: return "format_error";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kCalibration: return "calibration_error";
    case ErrorCode::kNumerical: return "numerical_error";
    case ErrorCode::kParse: return "parse_error";
  }
  return "unknown_error";
}

}  // namespace amt
