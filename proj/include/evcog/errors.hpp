#pragma once

#include <stdexcept>
#include <string>

namespace evcog {

// Base for all errors raised by the pipeline. Each subclass names one failure
// mode from the module contracts so callers can catch selectively.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LexError : public Error {
 public:
  using Error::Error;
};

// Carries the offending text so callers can report or resample.
class LengthOverflowError : public Error {
 public:
  LengthOverflowError(std::string text, std::size_t length, std::size_t limit)
      : Error("sequence of " + std::to_string(length) + " tokens exceeds context length " +
              std::to_string(limit) + ": \"" + text + "\""),
        text_(std::move(text)) {}
  const std::string& text() const noexcept { return text_; }

 private:
  std::string text_;
};

class InvalidTokenError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class UndefinedLossError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IngestionError : public Error {
 public:
  using Error::Error;
};

class StylizationOverflowError : public Error {
 public:
  StylizationOverflowError(std::string problem_id, const std::string& detail)
      : Error("stylized problem '" + problem_id + "' overflows the context: " + detail),
        problem_id_(std::move(problem_id)) {}
  const std::string& problem_id() const noexcept { return problem_id_; }

 private:
  std::string problem_id_;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class TooSmallError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

}  // namespace evcog
