#pragma once

#include <stdexcept>
#include <string>

namespace coda {

// Bad user input: malformed files, shape mismatches, invalid configs.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Runtime numerical failure: non-finite values, overflow.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace coda
