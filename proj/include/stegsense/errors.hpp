#ifndef STEGSENSE_ERRORS_HPP_
#define STEGSENSE_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace stegsense {

// Base of every error the library raises. The CLI maps ConfigError and
// DataError onto distinct exit codes; everything else is a bug or misuse.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace stegsense

#endif  // STEGSENSE_ERRORS_HPP_
