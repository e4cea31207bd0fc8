#pragma once

#include <stdexcept>
#include <string>

namespace kfreg {

/// Invalid arguments: shape mismatches, empty inputs, out-of-range options.
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Numerical failure: singular solves, non-finite values, stalled iterations.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// More components requested than the data supports.
struct RankError : NumericError {
    RankError(const std::string& msg, int usable)
        : NumericError(msg), max_usable(usable) {}
    int max_usable;
};

/// Metric undefined on the given data (e.g. R^2 with a constant truth vector).
struct UndefinedMetricError : NumericError {
    using NumericError::NumericError;
};

/// Problems reading or interpreting data files.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed run configuration or command usage.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace kfreg
