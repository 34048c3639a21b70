// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace timl {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor shape or width mismatch.
struct ShapeError : Error {
    using Error::Error;
};

/// Invalid configuration (bad group count, non-positive rate, ...).
struct ConfigError : Error {
    using Error::Error;
};

/// A forward op produced NaN or Inf. Carries the op name for diagnostics.
struct NonFiniteError : Error {
    using Error::Error;
};

/// File or directory level failure.
struct IoError : Error {
    using Error::Error;
};

} // namespace timl
