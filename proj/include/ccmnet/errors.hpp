#pragma once

#include <stdexcept>
#include <string>

namespace ccmnet {

/// Base of every error thrown by the library. The CLI maps the concrete
/// subclasses onto its exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Tensor or image dimensions that do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Missing files, unknown ids, invalid records found while loading.
class LoadError : public Error {
public:
    using Error::Error;
};

/// Singular or ill-conditioned linear algebra, non-finite values.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Misuse of a stateful object (consumed tape, missing gradients).
class StateError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration, e.g. an empty training set.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Illuminant estimation impossible for the given input.
class EstimationError : public Error {
public:
    using Error::Error;
};

/// Least-squares fit without enough independent data.
class FitError : public NumericError {
public:
    using NumericError::NumericError;
};

}  // namespace ccmnet
