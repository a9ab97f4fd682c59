#pragma once

#include <stdexcept>
#include <string>

namespace asmloc {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration value outside its valid domain.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced where finite values are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Config validation failure; the message starts with the offending field path.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& field, const std::string& what)
      : Error(field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FileNotFoundError : public IoError {
 public:
  explicit FileNotFoundError(const std::string& path)
      : IoError("file not found: " + path), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class DimensionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Checkpoint entry missing or shaped differently from the model.
class LoadError : public IoError {
 public:
  LoadError(const std::string& parameter, const std::string& what)
      : IoError("parameter '" + parameter + "': " + what), parameter_(parameter) {}
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

}  // namespace asmloc
