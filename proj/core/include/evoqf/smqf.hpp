#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evoqf/graph.hpp"

namespace evoqf {

struct FusionConfig {
  std::vector<std::string> modality_order;
  std::size_t primary = 0;
  std::size_t queries_per_modality = 8;
  std::size_t embed_dim = 64;

  void validate() const;  // BadConfig
  const std::string& primary_name() const { return modality_order.at(primary); }
  // Every modality except the primary, in configured order.
  std::vector<std::string> supporting() const;
};

/// Linear map pi from the channel-concatenated supporting queries to d
/// channels, applied to each query row. Its weight is kept as one d x d
/// column group per supporting modality so groups can be appended later.
struct ProjectionTheta {
  std::vector<std::string> groups;       // supporting modalities, in order
  std::map<std::string, Tensor> weight;  // group -> d x d (out x in)
  Tensor bias;                           // d

  std::size_t embed_dim() const { return bias.size(); }
  // Full d x ((n-1) d) weight with groups laid out left to right.
  Tensor concatenated_weight() const;
  // Appends a zero-initialized group. Existing outputs are unchanged.
  void add_group(const std::string& modality);
};

ProjectionTheta init_theta(const FusionConfig& config, std::uint64_t seed);

/// Rows [0, k) are the primary queries x_p; rows [k, 2k) the gated block.
struct FusedQuery {
  Tensor tokens;
  std::size_t queries_per_modality = 0;
  bool has_gated = false;

  std::size_t token_count() const { return tokens.rows(); }
  Tensor primary_rows() const;
  Tensor gated_rows() const;
};

/// x_bar_s = concat_channels(supporting) * W_theta^T + bias. Requires exactly
/// one k x d tensor per group, in group order.
Tensor project_supporting(const ProjectionTheta& theta, std::span<const Tensor> supporting);

/// sigmoid(x) (.) x, elementwise.
Tensor self_gate(const Tensor& x_bar);

/// Primary rows first, then the gated rows.
FusedQuery fuse_queries(const Tensor& x_primary, const Tensor& x_gated);
/// Degenerate single-modality case: the primary queries alone.
FusedQuery fuse_queries(const Tensor& x_primary);

/// End-to-end fusion of one patient's per-modality queries.
FusedQuery smqf_fuse(const ProjectionTheta& theta, const FusionConfig& config,
                     const std::map<std::string, Tensor>& queries);

/// Graph forms over batched (patients * k) x d query blocks. Supporting
/// modalities absent from `present` are skipped, which is the same as
/// feeding them all-zero queries through a zero weight group.
Var project_supporting(Graph& g, ProjectionTheta& theta, const std::map<std::string, Var>& present);
Var self_gate(Var x_bar);

}  // namespace evoqf
