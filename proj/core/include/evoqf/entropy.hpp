#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace evoqf {

inline constexpr std::size_t kPatchSide = 224;
inline constexpr double kDefaultEntropyThreshold = 5.0;

/// One 224 x 224 8-bit grayscale tile, row-major.
struct Patch {
  std::vector<std::uint8_t> pixels = std::vector<std::uint8_t>(kPatchSide * kPatchSide, 0);

  // Throws ShapeMismatch unless exactly 224 * 224 pixels.
  static Patch from_pixels(std::vector<std::uint8_t> pixels);
  static Patch constant(std::uint8_t value);
};

/// Shannon entropy in bits of the 256-bin histogram.
double patch_entropy(const Patch& patch);

struct FilterResult {
  std::vector<Patch> kept;
  std::size_t discarded = 0;
};

/// Keeps patches with entropy >= threshold, in input order. Throws BadConfig
/// for a negative threshold.
FilterResult entropy_filter(std::span<const Patch> patches, double threshold = kDefaultEntropyThreshold);

/// Non-overlapping 224 x 224 tiles of a width x height grayscale image;
/// partial tiles at the right and bottom edges are dropped.
std::vector<Patch> extract_patches(std::span<const std::uint8_t> image, std::size_t width, std::size_t height);

}  // namespace evoqf
