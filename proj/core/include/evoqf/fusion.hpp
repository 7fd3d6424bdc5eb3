#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evoqf/graph.hpp"
#include "evoqf/qformer.hpp"
#include "evoqf/smqf.hpp"

namespace evoqf {

enum class FusionKind { Early, Late, CrossAttention, TensorFusion, Gated, CrossmodalTransformer, Smqf };

std::string_view to_string(FusionKind kind) noexcept;
FusionKind fusion_kind_from_string(std::string_view name);  // UnknownKind
std::vector<FusionKind> all_fusion_kinds();

inline constexpr std::size_t kTensorFusionMaxModalities = 3;

struct FusionOptions {
  std::size_t heads = 4;
  // Per-modality width before the outer product; 0 keeps the pooled width.
  std::size_t tensor_fusion_dim = 8;
};

/// One fusion strategy and its parameters. `inputs` gives each modality's
/// embedding width; `out_dim` is the width of the fused representation.
struct FusionMethod {
  FusionKind kind = FusionKind::Smqf;
  std::vector<ModalitySpec> inputs;
  std::string primary;
  std::size_t out_dim = 0;
  FusionOptions options;
  std::map<std::string, Tensor> params;
  ProjectionTheta theta;  // Smqf only

  bool produces_score() const noexcept { return kind == FusionKind::Late; }
  // Width of the representation handed to the risk head (1 for late fusion).
  std::size_t representation_dim() const noexcept { return produces_score() ? 1 : out_dim; }
  std::size_t input_dim(const std::string& modality) const;

  void visit(const ParamVisitor& fn);
  void visit(const ConstParamVisitor& fn) const;
};

FusionMethod init_fusion(FusionKind kind, std::span<const ModalitySpec> inputs, const std::string& primary,
                         std::size_t out_dim, std::uint64_t seed, const FusionOptions& options = {});

/// Per-modality embedding for a batch: `per_patient` consecutive rows per patient.
struct FusionInput {
  Var tokens;
  std::size_t per_patient = 1;
};

/// Fuses a batch of per-modality embeddings into one row per patient:
/// patients x out_dim, or patients x 1 averaged risk scores for late fusion.
///   early                  pooled vectors concatenated, then linear to out_dim
///   late                   independent linear risk heads, scores averaged
///   cross_attention        primary tokens attend to all other tokens, pooled
///   tensor_fusion          outer product of 1-appended pooled vectors, linear
///   gated                  sigmoid-gated supporting vectors added to primary
///   crossmodal_transformer each modality attends to all others, pooled, concat
///   smqf                   primary queries plus self-gated projection of the rest
/// Only smqf tolerates absent supporting modalities.
Var baseline_fuse(Graph& g, FusionMethod& method, const std::map<std::string, FusionInput>& embeddings,
                  std::size_t patients);

/// Unweighted mean of per-modality risk scores (late fusion aggregation).
double late_fuse_scores(std::span<const double> scores);

}  // namespace evoqf
