// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace myconcept {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or dimensions that do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument values (NaN pixels, empty targets, out-of-range indices).
class InputError : public Error {
 public:
  using Error::Error;
};

/// A vector whose norm is zero where a direction is required.
class DegenerateInputError : public InputError {
 public:
  using InputError::InputError;
};

/// Text that cannot be mapped onto the vocabulary.
class TokenizerError : public InputError {
 public:
  TokenizerError(const std::string& message, std::string token)
      : InputError(message), token_(std::move(token)) {}
  const std::string& token() const noexcept { return token_; }

 private:
  std::string token_;
};

/// Data on disk that violates a documented layout or schema.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& message, std::string path = {})
      : Error(path.empty() ? message : message + ": " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Wrong magic, unsupported version or truncated binary files.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Checksum mismatch on a stored record.
class CorruptionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// A request that clashes with existing state, such as a duplicate identifier.
class ConflictError : public Error {
 public:
  using Error::Error;
};

/// A lookup for something that does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace myconcept
