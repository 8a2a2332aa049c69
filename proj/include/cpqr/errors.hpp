// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cpqr {

/// Operand dimensions, mode indices or ranks that do not fit together.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Base for failures that depend on the numerical values of the operands.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The Gram matrix handed to a Cholesky solve is not (numerically) positive definite.
class NotPositiveDefinite : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A triangular factor has a zero or sub-threshold diagonal entry.
class SingularFactor : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cpqr
