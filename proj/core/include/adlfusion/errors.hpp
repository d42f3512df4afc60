#pragma once

#include <stdexcept>
#include <string>

namespace adlfusion {

// Invalid requested configuration: bad hyperparameters, impossible dimensions,
// malformed config files.  CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data: broken tensor files, bad detection
// records, mismatched shapes coming from disk.  CLI maps this to exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape disagreement between tensors.  Subtype of DataError because it almost
// always originates from inconsistent inputs.
class DimensionError : public DataError {
public:
    using DataError::DataError;
};

// Pose geometry that cannot be normalized (zero-length torso, coincident
// joint pairs, NaN joints).
class DegeneratePoseError : public DataError {
public:
    using DataError::DataError;
};

// Non-finite values where finite ones are required (diverged loss, failed
// gradient check evaluation).  CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace adlfusion
