#pragma once

#include <stdexcept>
#include <string>

namespace lad {

/// Format-level failures when reading any of the binary sidecars.
enum class FormatErrorCode {
  bad_magic,
  version_mismatch,
  truncated,
  malformed_header,
  label_overflow,
  missing_frame,
  io_failure,
};

const char* to_string(FormatErrorCode code);

class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  FormatErrorCode code() const noexcept { return code_; }

 private:
  FormatErrorCode code_;
};

/// Precondition violations on inputs (bad shapes, bad parameters).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failures: degenerate fits, non-finite values, divergence.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lad
