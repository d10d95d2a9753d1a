#pragma once

#include <stdexcept>
#include <string>

namespace refseg {

// Bad files, bad manifests, invariant-violating samples. CLI exit code 2.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values, undefined math (zero-norm cosine, NaN loss). CLI exit code 3.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or precondition violations in tensor operations.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Bad configuration values or unknown config keys. CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace refseg
