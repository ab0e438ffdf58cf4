#pragma once

#include <stdexcept>
#include <string>

namespace pincer {

/// Error category, also used as the CLI exit code.
enum class ErrorKind : int {
  kContract = 1,
  kConfig = 2,
  kData = 3,
  kState = 4,
  kNumeric = 5,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kData: return "data";
    case ErrorKind::kState: return "state";
    case ErrorKind::kNumeric: return "numeric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Violated precondition of an operation (wrong shape, bad argument).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::kContract, what) {}
};

class DimensionError : public ContractError {
 public:
  explicit DimensionError(const std::string& what) : ContractError(what) {}
};

class EmptyInputError : public ContractError {
 public:
  explicit EmptyInputError(const std::string& what) : ContractError(what) {}
};

/// Statistical input with no information (e.g. all paired differences zero).
class DegenerateInputError : public ContractError {
 public:
  explicit DegenerateInputError(const std::string& what) : ContractError(what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

/// Malformed file: bad manifest, truncated payload, checksum or version mismatch.
class FormatError : public DataError {
 public:
  explicit FormatError(const std::string& what) : DataError(what) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& what) : Error(ErrorKind::kState, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

}  // namespace pincer
