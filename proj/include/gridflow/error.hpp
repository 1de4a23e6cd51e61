#pragma once

#include <stdexcept>
#include <string>

namespace gridflow {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (files, networks, snapshots).
class DataError : public Error {
 public:
  using Error::Error;
};

/// An optimization routine could not produce a certified answer.
class SolverError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared inside the differentiable model.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace gridflow
