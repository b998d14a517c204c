#pragma once

#include <stdexcept>
#include <string>

namespace fieldguide {

enum class ErrorCode {
  invalid_argument,
  not_found,
  conflict,
  budget_exhausted,
  precondition,
  io,
  parse,
  divergence,
};

/// Library-wide exception. The code lets callers (the HTTP service in
/// particular) map failures onto status codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

const char* to_string(ErrorCode code) noexcept;

}  // namespace fieldguide
