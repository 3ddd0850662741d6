#pragma once

#include <stdexcept>
#include <string>

namespace cloudmask {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/operator shape disagreements. Messages name both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, out-of-range probabilities, invalid labels.
class ValueError : public Error {
 public:
  using Error::Error;
};

// Invalid UNetConfig / TrainConfig / RunSpec contents.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File-level problems, each a distinct kind so callers can tell them apart.
class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public IoError {  // wrong magic or malformed structure
 public:
  using IoError::IoError;
};

class VersionError : public IoError {  // magic ok, version unsupported
 public:
  using IoError::IoError;
};

class TruncationError : public IoError {  // file ends before declared payload
 public:
  using IoError::IoError;
};

}  // namespace cloudmask
