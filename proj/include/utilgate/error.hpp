#pragma once

#include <stdexcept>
#include <string>

namespace utilgate {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed input values or flags (bad sigma, unknown tier, tau out of range).
class InvalidArgument : public Error {
public:
  using Error::Error;
};

// IO failures and UTCT / text-record format violations.
class FormatError : public Error {
public:
  using Error::Error;
};

// Incompatible tensor shapes or layouts.
class ShapeError : public Error {
public:
  using Error::Error;
};

// Curve fitting failed: degenerate data, non-convergence or invalid parameters.
class FitError : public Error {
public:
  using Error::Error;
};

} // namespace utilgate
