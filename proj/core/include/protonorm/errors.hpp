// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace protonorm {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not agree for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// API misuse: calling an operation in a state where it is not allowed.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Bad data handed in by the caller (non-finite values, empty inputs, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint failed magic, version, or checksum validation.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (NaN loss or gradient).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace protonorm
