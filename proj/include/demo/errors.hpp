// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace demo {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: shapes, flag lattices, hyper-parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller passed data that violates an operation's precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Named-array archive does not match the expected parameter manifest.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Dataset directory is malformed.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Batch composition does not satisfy the triplet-mining precondition.
class SamplingError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Operation called in the wrong object state (e.g. attention retention off).
class StateError : public Error {
 public:
  using Error::Error;
};

class ExportError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or some other failure happened mid-run.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries the 1-based offending line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace demo
