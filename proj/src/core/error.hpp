#pragma once

#include <stdexcept>
#include <string>

namespace halk {

// Two failure classes surface at the API boundary: bad input (exit 2) and
// numerical failure (exit 3).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace halk
