#pragma once

#include <stdexcept>
#include <string>

namespace im2markup {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not conform to an op's rule.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An op produced a non-finite value, or training diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

// An API precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Bad configuration file or inconsistent model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem / serialization failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace im2markup
