#pragma once

#include <stdexcept>
#include <string>

namespace evolve {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InvalidSequenceKind : public Error {
 public:
  using Error::Error;
};

class ContextTooLong : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed record while reading a dataset file. Carries the 1-based line.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t line)
      : Error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class InvalidToken : public Error {
 public:
  using Error::Error;
};

class InvalidTemperature : public Error {
 public:
  using Error::Error;
};

class EnumerationTooLarge : public Error {
 public:
  using Error::Error;
};

class EmptyBatch : public Error {
 public:
  using Error::Error;
};

class InsufficientResponses : public Error {
 public:
  using Error::Error;
};

class ChainLengthMismatch : public Error {
 public:
  using Error::Error;
};

class EmptyFilteredDataset : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Configuration problem; message names the offending field path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ReportError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class RunDirError : public Error {
 public:
  using Error::Error;
};

}  // namespace evolve
