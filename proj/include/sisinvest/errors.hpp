#pragma once

#include <stdexcept>
#include <string>

namespace sisinvest {

/// Malformed or inconsistent user input (files, parameters, preconditions).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical routine failed to converge or lost accuracy.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computed result violated a property it is required to satisfy.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sisinvest
