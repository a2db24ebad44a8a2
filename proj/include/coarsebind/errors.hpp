#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace coarsebind {

// Invalid arguments to an operation (bad shapes, out-of-range values, ...).
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed serialized data. `byte_offset` is the position in the stream
// where parsing failed, or -1 when the failure is semantic rather than
// syntactic (unknown key, wrong type, bad shape).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::ptrdiff_t byte_offset = -1)
      : std::runtime_error(byte_offset >= 0
                               ? msg + " (byte offset " + std::to_string(byte_offset) + ")"
                               : msg),
        byte_offset_(byte_offset) {}

  std::ptrdiff_t byte_offset() const { return byte_offset_; }

 private:
  std::ptrdiff_t byte_offset_;
};

// Non-finite values encountered during numeric computation.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Loss diverged during training.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace coarsebind
