#pragma once

#include <stdexcept>
#include <string>

namespace sketchcolour {

/// Process exit codes shared by every command line entry point.
enum class ExitCode : int {
    success = 0,
    usage = 1,
    contract = 2,
    numeric = 3,
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual ExitCode exit_code() const noexcept { return ExitCode::contract; }
};

/// Tensor geometry does not satisfy a shape law (names the axis and divisor).
class DimensionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// A documented precondition or state contract was violated.
class ContractError : public Error {
public:
    using Error::Error;
};

class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class GenerationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or a diverging optimisation.
class NumericError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::numeric; }
};

}  // namespace sketchcolour
