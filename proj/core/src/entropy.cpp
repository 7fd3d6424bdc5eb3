#include "evoqf/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "evoqf/error.hpp"

namespace evoqf {

Patch Patch::from_pixels(std::vector<std::uint8_t> pixels) {
  if (pixels.size() != kPatchSide * kPatchSide) {
    fail(ErrorCode::ShapeMismatch, "patch needs 224*224 pixels, got " + std::to_string(pixels.size()));
  }
  Patch p;
  p.pixels = std::move(pixels);
  return p;
}

Patch Patch::constant(std::uint8_t value) {
  Patch p;
  std::fill(p.pixels.begin(), p.pixels.end(), value);
  return p;
}

double patch_entropy(const Patch& patch) {
  if (patch.pixels.size() != kPatchSide * kPatchSide) fail(ErrorCode::ShapeMismatch, "patch is not 224 x 224");
  std::array<std::size_t, 256> hist{};
  for (auto v : patch.pixels) ++hist[v];
  const double n = static_cast<double>(patch.pixels.size());
  double h = 0.0;
  for (auto c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

FilterResult entropy_filter(std::span<const Patch> patches, double threshold) {
  if (!(threshold >= 0.0)) fail(ErrorCode::BadConfig, "entropy threshold must be >= 0");
  FilterResult out;
  for (const auto& p : patches) {
    if (patch_entropy(p) >= threshold) {
      out.kept.push_back(p);
    } else {
      ++out.discarded;
    }
  }
  return out;
}

std::vector<Patch> extract_patches(std::span<const std::uint8_t> image, std::size_t width, std::size_t height) {
  if (image.size() != width * height) fail(ErrorCode::ShapeMismatch, "image buffer does not match width * height");
  std::vector<Patch> out;
  for (std::size_t y0 = 0; y0 + kPatchSide <= height; y0 += kPatchSide) {
    for (std::size_t x0 = 0; x0 + kPatchSide <= width; x0 += kPatchSide) {
      Patch p;
      for (std::size_t y = 0; y < kPatchSide; ++y) {
        const auto* row = image.data() + (y0 + y) * width + x0;
        std::copy(row, row + kPatchSide, p.pixels.begin() + static_cast<std::ptrdiff_t>(y * kPatchSide));
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace evoqf
