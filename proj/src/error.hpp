#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lrmt {

enum class ErrorKind {
  invalid_argument,  // bad call or configuration
  data,              // user data failed validation
  io,                // filesystem problems
  format,            // malformed model/log/config files
  diverged,          // non-finite training loss
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string msg)
      : std::runtime_error(std::move(msg)), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DivergedError : public Error {
 public:
  DivergedError(std::int64_t step, std::string msg)
      : Error(ErrorKind::diverged, std::move(msg)), step_(step) {}

  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace lrmt
