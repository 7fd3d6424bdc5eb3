#include "evoqf/hash.hpp"

#include <bit>
#include <cstring>

namespace evoqf {

namespace {
constexpr std::uint64_t kPrime = 0x100000001b3ULL;
}

Fnv1a64& Fnv1a64::update(std::span<const unsigned char> bytes) noexcept {
  for (unsigned char b : bytes) {
    state_ ^= b;
    state_ *= kPrime;
  }
  return *this;
}

Fnv1a64& Fnv1a64::update(std::string_view text) noexcept {
  update(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
  // Length terminator so ("ab","c") and ("a","bc") differ.
  return update(static_cast<std::uint64_t>(text.size()));
}

Fnv1a64& Fnv1a64::update(std::span<const double> values) noexcept {
  for (double v : values) update(std::bit_cast<std::uint64_t>(v));
  return *this;
}

Fnv1a64& Fnv1a64::update(std::uint64_t value) noexcept {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  return update(std::span<const unsigned char>(bytes, 8));
}

std::string Fnv1a64::hex() const { return to_hex(state_); }

std::uint64_t fnv1a64(std::string_view text) noexcept { return Fnv1a64{}.update(text).digest(); }

std::string to_hex(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xF];
    value >>= 4;
  }
  return out;
}

}  // namespace evoqf
