// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace zsinv {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents that do not agree with an operation's contract.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid layer/network/optimizer/etc. configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// NaN or Inf detected in a value, gradient or loss.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Misuse of the autodiff graph (double backward, detached loss, ...).
class GraphError : public Error {
public:
    using Error::Error;
};

/// Checkpoint, image or config file problems.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace zsinv
