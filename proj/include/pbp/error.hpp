// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace pbp {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the primitive.
struct ShapeError : Error {
  using Error::Error;
};

/// NaN/Inf produced, or an update diverged.
struct NumericalError : Error {
  using Error::Error;
};

/// Invalid configuration values or malformed input files.
struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

/// Operation called in the wrong lifecycle state (e.g. perforating twice).
struct StateError : Error {
  using Error::Error;
};

}  // namespace pbp
