#pragma once

#include <cstdint>

#include "evoqf/gradcheck.hpp"
#include "evoqf/model.hpp"

namespace evoqf {

/// Tiny three-modality model for end-to-end gradient checks:
/// depth 1, d = 8, 2 heads, 2 queries, LoRA rank 2, native dims 5/6/4.
ModelConfig tiny_model_config(FusionKind fusion = FusionKind::Smqf);

struct ModelGradcheckOptions {
  std::size_t patients = 4;
  std::size_t max_tokens = 3;  // token counts cycle through 1..max_tokens
  double step = 1e-5;
  double tolerance = 1e-4;
  // Zero-initialized tensors (LoRA B, attention W_o, ...) are perturbed so
  // every path carries gradient.
  bool perturb = true;
};

/// Central-difference check of d(Cox loss)/d(every parameter) for a model
/// built from `config` on a random batch drawn from `seed`.
GradCheckReport model_gradcheck(const ModelConfig& config, std::uint64_t seed, const ModelGradcheckOptions& options = {});

}  // namespace evoqf
