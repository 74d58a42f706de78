#pragma once

#include <stdexcept>
#include <string>

namespace sqac {

// Base of every error the library throws. The CLI maps the subclasses onto
// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf in a forward value, gradient or loss.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class MissingPrerequisite : public Error {
 public:
  using Error::Error;
};

// A pruning schedule has nothing left to remove.
class ScheduleExhausted : public Error {
 public:
  using Error::Error;
};

}  // namespace sqac
