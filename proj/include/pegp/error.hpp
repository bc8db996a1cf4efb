#pragma once

#include <stdexcept>
#include <string>

namespace pegp {

// Exit-code aligned error categories used by the CLI.
enum class ErrorKind { usage = 1, validation = 2, numerical = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[nodiscard]] inline Error validation_error(const std::string& what) {
  return Error(ErrorKind::validation, what);
}

[[nodiscard]] inline Error numerical_error(const std::string& what) {
  return Error(ErrorKind::numerical, what);
}

}  // namespace pegp
