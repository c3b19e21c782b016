#pragma once

#include <stdexcept>
#include <string>

namespace focuskit {

// Every failure the library raises derives from Error. The two families map
// onto CLI exit codes: ValidationError -> 1, IoError -> 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed JSON or other structured text; message carries line context.
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Binary file with a bad magic number or truncated payload.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DegenerateInputError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A text metric whose precondition does not hold for the given input.
class UndefinedMetricError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NotFoundError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConflictError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class CredentialError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class TransportError : public IoError {
 public:
  using IoError::IoError;
};

class EmptyResponseError : public IoError {
 public:
  using IoError::IoError;
};

class DecodeError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace focuskit
