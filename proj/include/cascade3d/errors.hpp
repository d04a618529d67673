#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cascade3d {

// Bad arguments or shapes supplied by the caller.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed VOL1 / CKPT1 payloads. `offset` is the byte position where
// parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// Input is well-formed but mathematically degenerate for the operation.
class DegenerateError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace cascade3d
