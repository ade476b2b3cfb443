#pragma once

#include <stdexcept>
#include <string>

namespace emo {

// Base for all library errors. Subclasses only tag the failure category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class TopologyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

#define EMO_CHECK(cond, ErrType, msg)   \
  do {                                  \
    if (!(cond)) throw ErrType((msg));  \
  } while (0)

}  // namespace emo
