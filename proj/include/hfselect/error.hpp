#pragma once

#include <stdexcept>
#include <string>

namespace hfselect {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input: malformed structure, dimension mismatch, violated precondition.
/// The CLI maps these to exit status 1.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Numerical or pipeline failure on otherwise valid input (exit status 2).
class RuntimeFailure : public Error {
public:
    using Error::Error;
};

} // namespace hfselect
