#pragma once

#include <stdexcept>
#include <string>

namespace noduleclip {

// Bad input, bad configuration, or a violated contract. Maps to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure while doing work on valid inputs (I/O, numerical blow-up). Exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace noduleclip
