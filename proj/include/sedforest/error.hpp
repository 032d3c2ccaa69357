#pragma once

#include <stdexcept>
#include <string>

namespace sedforest {

// Raised for invalid input data, configuration, or files.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sedforest
