#pragma once

#include <stdexcept>
#include <string>

namespace sct {

// Failure categories map onto distinct CLI exit codes (see tools/sctctl.cpp).
enum class ErrorKind { Config, Data, Runtime };

class Error : public std::runtime_error {
public:
  explicit Error(const std::string &what, ErrorKind kind = ErrorKind::Runtime)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string &what) : Error(what, ErrorKind::Config) {}
};

class DataError : public Error {
public:
  explicit DataError(const std::string &what) : Error(what, ErrorKind::Data) {}
};

// Volume file parsing.
class MalformedHeader : public DataError {
public:
  using DataError::DataError;
};
class DimensionMismatch : public DataError {
public:
  using DataError::DataError;
};
class UnsupportedDatatype : public DataError {
public:
  using DataError::DataError;
};
class IoError : public DataError {
public:
  using DataError::DataError;
};

// Contract violations on in-memory values.
class InvalidArgument : public Error {
public:
  explicit InvalidArgument(const std::string &what) : Error(what, ErrorKind::Runtime) {}
};
class ShapeMismatch : public InvalidArgument {
public:
  using InvalidArgument::InvalidArgument;
};
class DomainMismatch : public InvalidArgument {
public:
  using InvalidArgument::InvalidArgument;
};

class TrainingDiverged : public Error {
public:
  explicit TrainingDiverged(const std::string &what) : Error(what, ErrorKind::Runtime) {}
};

class IncompleteGrid : public DataError {
public:
  using DataError::DataError;
};

} // namespace sct
