#pragma once

#include <cstdint>
#include <string_view>

namespace evoqf {

inline constexpr std::string_view kRngAlgorithm = "splitmix64-ctr/box-muller";

/// Counter-based generator: draw i of stream s is mix(key(seed, s) + i * golden),
/// where mix is the SplitMix64 finalizer. Every stream is independent and
/// reproducible without reference to any host library generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  // Substream addressed by a name, e.g. a parameter or patient id.
  static Rng named(std::uint64_t seed, std::string_view name);

  std::uint64_t next_u64();
  double uniform();  // in (0, 1)
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  double exponential(double rate);
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64_mix(std::uint64_t x) noexcept;

}  // namespace evoqf
