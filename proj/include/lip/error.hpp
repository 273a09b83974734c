#pragma once

#include <stdexcept>
#include <string>

namespace lip {

// Error taxonomy used across the library. The CLI maps ConfigError to
// exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched or otherwise unusable tensor/image shapes.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration values (bad rates, zero counts, unknown keys, ...).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Valid shapes but mathematically undefined request (constant reference
// image in a normalized metric, non-scalar backward seed, ...).
class ValueError : public Error {
 public:
  explicit ValueError(const std::string& msg) : Error(msg) {}
};

// File I/O and format failures.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Runtime faults during optimization (NaN loss/gradients).
class TrainingFault : public Error {
 public:
  explicit TrainingFault(const std::string& msg) : Error(msg) {}
};

}  // namespace lip
