#pragma once

#include <stdexcept>
#include <string>

namespace cantrack {

// Root of every error the library raises. The CLI maps subclasses onto exit
// codes: validation/domain/shape -> 1, io -> 2, contract -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user-facing input: config fields, CSV rows, labels out of range.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Mathematically undefined input (empty softmax, zero-norm cosine, D = 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Matrix/vector dimensions do not chain.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A caller broke an internal precondition (stale cache, non-simplex weights).
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cantrack
