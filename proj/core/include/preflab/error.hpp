#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace preflab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration values (non-positive temperature, malformed thresholds, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Token index out of range, wrong length, bad termination.
class InvalidSequenceError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Stored data carries a schema/format version this build cannot read.
class MigrationError : public Error {
 public:
  using Error::Error;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or statistic during training.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& what, std::string prompt_id = {})
      : Error("diverged at step " + std::to_string(step) + (prompt_id.empty() ? "" : " (prompt " + prompt_id + ")") +
              ": " + what),
        step_(step),
        prompt_id_(std::move(prompt_id)) {}
  std::size_t step() const noexcept { return step_; }
  /// Prompt whose statistics went non-finite, when known.
  const std::string& prompt_id() const noexcept { return prompt_id_; }

 private:
  std::size_t step_;
  std::string prompt_id_;
};

/// q(y) = 0 where p(y) > 0, or tables over different supports.
class SupportError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Enumeration would exceed the configured cap.
class CapExceededError : public Error {
 public:
  CapExceededError(double required, double cap)
      : Error("enumeration needs cap >= " + std::to_string(static_cast<long long>(required)) +
              " (configured " + std::to_string(static_cast<long long>(cap)) + ")"),
        required_(required) {}
  double required() const noexcept { return required_; }

 private:
  double required_;
};

/// A pair that must not be used for training (e.g. Skipped) was passed to a loss.
class RejectedInputError : public Error {
 public:
  using Error::Error;
};

class AuthError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

}  // namespace preflab
