#pragma once

#include <stdexcept>
#include <string>

namespace ss3d {

/// Exception carrying a stable, machine-parseable error code (e.g. "E_NO_BASE").
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, const std::string& code, const std::string& message) {
  if (!condition) {
    throw Error(code, message);
  }
}

}  // namespace ss3d
