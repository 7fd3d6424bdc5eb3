#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace evoqf {

/// 64-bit FNV-1a over raw bytes. Used for parameter and config fingerprints.
class Fnv1a64 {
 public:
  Fnv1a64& update(std::span<const unsigned char> bytes) noexcept;
  Fnv1a64& update(std::string_view text) noexcept;
  Fnv1a64& update(std::span<const double> values) noexcept;
  Fnv1a64& update(std::uint64_t value) noexcept;

  std::uint64_t digest() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t fnv1a64(std::string_view text) noexcept;
std::string to_hex(std::uint64_t value);

}  // namespace evoqf
