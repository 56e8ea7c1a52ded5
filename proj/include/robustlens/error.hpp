#pragma once

#include <stdexcept>
#include <string>

namespace robustlens {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with an op or a layer chain.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN/Inf appeared in a forward value, a gradient, or an update.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Dataset, manifest, or image decoding failure.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Corrupt, truncated, or unsupported checkpoint file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or argument.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff graph (e.g. backward on a consumed graph).
class GraphError : public Error {
 public:
  using Error::Error;
};

}  // namespace robustlens
