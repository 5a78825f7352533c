// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace moec {

// Dimension mismatches between operands.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Out-of-range or inconsistent argument values.
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Mathematically undefined results (e.g. correlation of a constant series).
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File and serialization failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace moec
