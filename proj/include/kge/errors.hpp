#pragma once

#include <stdexcept>
#include <string>

namespace kge {

// Base of every error the library raises. Subclasses name the failure class so
// callers (the CLI in particular) can map them onto distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace kge
