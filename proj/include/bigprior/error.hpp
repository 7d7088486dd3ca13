#pragma once

#include <stdexcept>
#include <string>

namespace bigprior {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes or channel counts disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside the domain an operation accepts.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// File-system or decoding failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// An iterative procedure produced a non-finite objective.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace bigprior
