#pragma once

#include <stdexcept>

namespace driftlab {

/// Bad input data or configuration: malformed records, violated
/// preconditions on corpora and splits, out-of-range hyperparameters.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace driftlab
