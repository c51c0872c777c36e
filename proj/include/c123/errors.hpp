#pragma once

#include <stdexcept>
#include <string>

namespace c123 {

// Error taxonomy. Shape/Param/Usage map to CLI exit code 1, Io to exit code 2.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParamError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace c123
