#pragma once

#include <stdexcept>
#include <string>

namespace gfgl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Vector or tensor shapes do not agree.
class DimensionError : public Error {
  public:
    using Error::Error;
};

/// A parameter lies outside the domain of a function.
class DomainError : public Error {
  public:
    using Error::Error;
};

/// Malformed or inconsistent input data (files, datasets, specs).
class DataError : public Error {
  public:
    using Error::Error;
};

/// Invalid configuration or command-line arguments.
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// Non-finite values or a failed numerical procedure.
class NumericalError : public Error {
  public:
    using Error::Error;
};

/// Checkpoint could not be read: bad magic, version, truncation or shape.
class CheckpointError : public Error {
  public:
    using Error::Error;
};

/// Exact lattice enumeration requested beyond the supported size.
class OracleRegimeError : public Error {
  public:
    using Error::Error;
};

}  // namespace gfgl
