#pragma once

#include <stdexcept>
#include <string>

namespace qrater {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or geometry do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside its documented domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A model, calibration set or plan on disk is malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A quantization threshold would be zero (all-zero tensor or activation).
class DegenerateScaleError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration, detected before any compute.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace qrater
