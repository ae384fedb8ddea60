#pragma once

#include <stdexcept>
#include <string>

namespace deepdose {

// Base of every error the library throws. The CLI maps the concrete types
// onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Extents that cannot describe a tensor or violate an operator's shape rule.
class InvalidShape : public Error {
public:
    using Error::Error;
};

// Caller broke an operation precondition (mismatched operands, empty masks).
class ContractError : public Error {
public:
    using Error::Error;
};

// NaN/Inf or a zero divisor produced during a computation.
class NumericError : public Error {
public:
    using Error::Error;
};

// Bad configuration values (model divisibility, training settings, phantom spec).
class InvalidConfig : public Error {
public:
    using Error::Error;
};

// Binary file with wrong magic/version or truncated payload.
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Broken internal invariant (e.g. a cycle in the autodiff graph).
class InternalError : public Error {
public:
    using Error::Error;
};

}  // namespace deepdose
