#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace flexmig {

using JobId = std::int64_t;
using InstanceId = std::int32_t;
using Seconds = double;

// Base of every error raised by the library. `code()` is a stable,
// machine-readable tag (e.g. "UnknownProfile").
class error : public std::runtime_error {
 public:
  error(std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), code_(std::move(code)) {}

  [[nodiscard]] const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class parse_error : public error {
 public:
  parse_error(std::size_t line, const std::string& what)
      : error("ParseError", "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  [[nodiscard]] std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace flexmig
