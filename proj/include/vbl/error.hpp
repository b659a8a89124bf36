#pragma once

#include <stdexcept>
#include <string>

namespace vbl {

enum class ErrorCode {
  invalid_input,
  dimension_mismatch,
  cheirality,
  degenerate_geometry,
  unobservable,
  estimation_failure,
  io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_input: return "invalid_input";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::cheirality: return "cheirality";
    case ErrorCode::degenerate_geometry: return "degenerate_geometry";
    case ErrorCode::unobservable: return "unobservable";
    case ErrorCode::estimation_failure: return "estimation_failure";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

/// Process exit status for an error: 2 for bad input, 3 for numerical failure.
inline int exit_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::unobservable:
    case ErrorCode::estimation_failure:
      return 3;
    default:
      return 2;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace vbl
