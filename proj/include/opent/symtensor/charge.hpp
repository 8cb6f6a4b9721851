#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

namespace opent::symtensor {

/// Pair of U(1) charges carried by an operator-space index. Both components
/// are doubled magnetizations (2m), so spin-1/2 arithmetic stays integral:
/// `qk` is the charge under left multiplication (ket side), `qb` under right
/// multiplication (bra side).
struct Charge {
  int qk = 0;
  int qb = 0;

  constexpr Charge operator+(const Charge& o) const { return {qk + o.qk, qb + o.qb}; }
  constexpr Charge operator-(const Charge& o) const { return {qk - o.qk, qb - o.qb}; }
  constexpr Charge operator-() const { return {-qk, -qb}; }
  constexpr Charge& operator+=(const Charge& o) {
    qk += o.qk;
    qb += o.qb;
    return *this;
  }
  constexpr auto operator<=>(const Charge&) const = default;

  /// Charge of the Hermitian-conjugate operator.
  constexpr Charge swapped() const { return {qb, qk}; }
};

std::string to_string(const Charge& c);

/// Arrow on a tensor leg. Conservation rule: sum of In charges equals sum of
/// Out charges for every stored block.
enum class Direction : std::int8_t { In = 1, Out = -1 };

constexpr Direction flip(Direction d) { return d == Direction::In ? Direction::Out : Direction::In; }
constexpr int sign(Direction d) { return static_cast<int>(d); }

}  // namespace opent::symtensor
