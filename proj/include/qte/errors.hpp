#pragma once

#include <stdexcept>
#include <string>

namespace qte {

// Two error families, matching the CLI exit-code contract:
// ValidationError -> exit 2 (bad input, shape, configuration),
// NumericalError  -> exit 3 (solver or resampling failure).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace qte
