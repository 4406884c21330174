#pragma once

#include <stdexcept>
#include <string>

namespace elm {

// Error categories map onto CLI exit codes: config 2, data/format 3, numerical 4.

// Invalid configuration, contract violation, or shape mismatch.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/dimension mismatch between tensors or grids.
struct ShapeError : ConfigError {
    using ConfigError::ConfigError;
};

// Malformed files, bad magic/version, unreadable data.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf encountered where finite values are required.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace elm
