#pragma once

#include <stdexcept>
#include <string>

namespace nlb {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters, dimension mismatches, malformed configs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or diverging iterations.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class InitializationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

/// Weight-file rejection. The kind distinguishes the failing check.
class LoadError : public IoError {
 public:
  enum class Kind { kBadMagic, kBadVersion, kChecksum, kShapeChain, kTruncated, kBadLayer };

  LoadError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}

  [[nodiscard]] Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace nlb
