#pragma once

#include <stdexcept>
#include <string>

namespace zegnn {

// Base of every error raised by the library. CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Missing/overlapping schema columns, malformed config files.
class SchemaError : public Error {
public:
    using Error::Error;
};

// Unparseable or non-finite CSV cell.
class ParseError : public Error {
public:
    using Error::Error;
};

// Constant column, zero-denominator statistics.
class DegenerateError : public Error {
public:
    using Error::Error;
};

// Out-of-range arguments and dimension mismatches.
class ParameterError : public Error {
public:
    using Error::Error;
};

// Non-finite loss during optimization.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
    int epoch() const { return epoch_; }

private:
    int epoch_;
};

}  // namespace zegnn
