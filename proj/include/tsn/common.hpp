#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tsn {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian and read/written raw");

// Thrown when an input file or config is malformed or inconsistent.
class InvalidInput : public std::runtime_error {
 public:
  explicit InvalidInput(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when an operation is called in a state that violates its contract.
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

// A sparse layer ran out of free parameters for a new task mask.
class CapacityExhausted : public std::runtime_error {
 public:
  explicit CapacityExhausted(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

inline void require_input(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInput(msg);
}

}  // namespace tsn
