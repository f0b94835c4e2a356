#pragma once

#include <stdexcept>
#include <string>

namespace lingcrel {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad arguments: out-of-range nodes, mismatched shapes, invalid parameters.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A numerical procedure failed to produce a usable result.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// A per-trial wall-clock budget ran out.
class TimeoutError : public Error {
public:
    using Error::Error;
};

}  // namespace lingcrel
