#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace exp3ss {

// Invalid hyperparameters or experiment spec. Maps to exit status 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller used an API out of contract (wrong call order, unknown arm, ...).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed or insufficient input data. Maps to exit status 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;

  DataError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_ = 0;
};

// The environment could not produce what a run needs (no candidates at the
// first round, session too short, ...). Maps to exit status 3.
class EnvironmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An expert failed to answer. Non-fatal inside a simulation round.
class ExpertError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace exp3ss
