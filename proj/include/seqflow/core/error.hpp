#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace seqflow {

// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  DimensionError(const std::string& what, std::size_t expected, std::size_t actual)
      : Error(what + ": expected " + std::to_string(expected) + ", got " + std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}

  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

// A NaN/Inf appeared, or a numerical procedure broke down.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, std::ptrdiff_t index = -1)
      : Error(index >= 0 ? what + " (index " + std::to_string(index) + ")" : what), index_(index) {}

  // Offending element, step or epoch; -1 when not applicable.
  std::ptrdiff_t index() const noexcept { return index_; }

 private:
  std::ptrdiff_t index_;
};

// Argument outside its documented domain, or an invalid configuration.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace seqflow
