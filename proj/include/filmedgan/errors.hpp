#pragma once

#include <stdexcept>
#include <cstdint>
#include <string>
#include <vector>

namespace filmedgan {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimensions disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An input violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN/Inf or an out-of-tolerance eigenvalue.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Renders a shape like "[3, 128, 64]".
std::string shape_string(const std::vector<int64_t>& sizes);

}  // namespace filmedgan
