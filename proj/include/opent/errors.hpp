#pragma once

#include <stdexcept>
#include <string>

namespace opent {

/// Incompatible indices, bad block keys, charge-rule violations.
class IndexError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values, failed decompositions, empty spectra.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace opent
