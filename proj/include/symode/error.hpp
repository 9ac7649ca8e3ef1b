#pragma once

#include <stdexcept>
#include <string>

namespace symode {

/// Base class for all library failures. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input document or encoding.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// A procedure was asked to run on an input outside its domain of validity.
class InapplicableError : public Error {
public:
    using Error::Error;
};

/// A numerical step failed: solver divergence, lost invertibility, tolerance violation.
class NumericalError : public Error {
public:
    using Error::Error;
};

inline void require_same_dim(long a, long b, const char* what) {
    if (a != b)
        throw std::invalid_argument(std::string("dimension mismatch in ") + what + ": " +
                                    std::to_string(a) + " vs " + std::to_string(b));
}

} // namespace symode
