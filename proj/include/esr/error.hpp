#pragma once

#include <stdexcept>
#include <string>

namespace esr {

/// Bad input: malformed manifest, unsupported class, invalid config.
/// The CLI maps this to exit status 2; every other exception maps to 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace esr
