#pragma once

#include <stdexcept>
#include <string>

namespace gaussmpm {

// Root of every error the library throws. Subclasses map onto CLI exit codes
// (see ExitCode in pipeline.hpp), so keep the hierarchy shallow.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input text or file could not be understood at all.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Input was parseable but carries invalid values (NaN, wrong shape, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A caller-supplied parameter is out of its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Solver state became invalid: particle outside support, NaN velocity, ...
class SimulationError : public Error {
 public:
  using Error::Error;
};

// A property record is missing an attribute its material class needs.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// A physical parameter violates a MaterialParams invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Failure talking to an external model service.
class ClientError : public Error {
 public:
  using Error::Error;
};

class TransportError : public ClientError {
 public:
  using ClientError::ClientError;
};

class AuthError : public ClientError {
 public:
  using ClientError::ClientError;
};

// The perception loop could not obtain a usable report.
class InferenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace gaussmpm
