#pragma once

#include <stdexcept>
#include <string>

namespace lst {

// All library failures derive from lst::Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// A step produced NaN/Inf. The layer is left in an undefined numeric state.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// |1 - 2*eta*|h|^2| is too close to zero: the rank-one update would make U singular.
class SingularUpdate : public Error {
 public:
  using Error::Error;
};

// The m x m Woodbury system (H^T H - I/(2 eta)) is numerically singular.
class SingularBatchUpdate : public Error {
 public:
  using Error::Error;
};

class SingularMatrix : public Error {
 public:
  using Error::Error;
};

class DegenerateOutput : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw DimensionMismatch(what);
}

}  // namespace detail
}  // namespace lst
