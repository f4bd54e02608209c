#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nmsr {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or image dimensions do not satisfy an operation's contract.
class InvalidShape : public Error {
 public:
  using Error::Error;
};

// A caller broke a precondition (non-scalar loss, empty mask, missing grad).
class ContractError : public Error {
 public:
  using Error::Error;
};

// An object was used in the wrong lifecycle state (e.g. double backward).
class StateError : public Error {
 public:
  using Error::Error;
};

// Inconsistent configuration: bad schedule, checkpoint/architecture mismatch.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file content. `offset` is the byte position where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// The optimization produced a non-finite loss.
class NumericDivergence : public Error {
 public:
  NumericDivergence(int scale_factor, long step)
      : Error("non-finite loss at scale 1/" + std::to_string(scale_factor) + ", step " +
              std::to_string(step)),
        scale_factor_(scale_factor),
        step_(step) {}
  int scale_factor() const noexcept { return scale_factor_; }
  long step() const noexcept { return step_; }

 private:
  int scale_factor_;
  long step_;
};

}  // namespace nmsr
