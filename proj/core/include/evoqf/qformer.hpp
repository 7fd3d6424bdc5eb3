#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "evoqf/graph.hpp"
#include "evoqf/lora.hpp"

namespace evoqf {

struct QFormerConfig {
  std::size_t depth = 2;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t queries_per_modality = 8;
  std::size_t ffn_multiplier = 2;
  // Longest feature sequence accepted per patient and modality; 0 = no cap.
  std::size_t max_tokens = 0;

  void validate() const;  // BadConfig
};

struct ModalitySpec {
  std::string name;
  std::size_t native_dim = 0;
};

struct AttentionWeights {
  Tensor wq, wk, wv, wo;  // d x d each, applied as x * W^T
};

struct FfnWeights {
  Tensor w_in, b_in;    // (m*d) x d, m*d
  Tensor w_out, b_out;  // d x (m*d), d
};

struct LayerWeights {
  Tensor ln_self_g, ln_self_b;
  Tensor ln_cross_g, ln_cross_b;
  Tensor ln_ffn_g, ln_ffn_b;
  AttentionWeights self_attn;
  AttentionWeights cross_attn;
  FfnWeights ffn;
};

/// Query bank and input adapter owned by the base for one modality.
struct ModalityWeights {
  std::size_t native_dim = 0;
  Tensor queries;  // k x d
  Tensor in_w;     // d x native_dim
  Tensor in_b;     // d
};

using ParamVisitor = std::function<void(const std::string& name, Tensor& tensor)>;
using ConstParamVisitor = std::function<void(const std::string& name, const Tensor& tensor)>;

struct QFormerWeights {
  QFormerConfig config;
  std::vector<LayerWeights> layers;
  Tensor out_ln_g, out_ln_b;
  std::map<std::string, ModalityWeights> modalities;
  std::vector<std::string> modality_order;  // registration order

  bool has_modality(const std::string& name) const { return modalities.contains(name); }
  const ModalityWeights& modality(const std::string& name) const;
  ModalityWeights& modality(const std::string& name);

  Tensor& site_weight(const Site& site);

  // Shared transformer stack: layers plus the output layernorm.
  void visit_shared(const ParamVisitor& fn);
  void visit_shared(const ConstParamVisitor& fn) const;
  // Query bank and input adapter of one modality.
  void visit_modality(const std::string& name, const ParamVisitor& fn);
  void visit_modality(const std::string& name, const ConstParamVisitor& fn) const;
};

/// Deterministic initialization. Attention output projections start at zero
/// so every attention branch initially adds exactly 0 to the residual stream.
QFormerWeights init_qformer(const QFormerConfig& config, std::span<const ModalitySpec> modalities, std::uint64_t seed);

/// Registers one more modality (query bank + input adapter) on existing weights.
void add_qformer_modality(QFormerWeights& weights, const ModalitySpec& spec, std::uint64_t seed);

/// Per-patient feature sequences of one modality, stacked row-wise.
struct FeatureBatch {
  Tensor features;                   // sum(lengths) x native_dim
  std::vector<std::size_t> lengths;  // tokens per patient

  std::size_t patients() const { return lengths.size(); }
};

/// Batched forward: returns (patients * k) x d query embeddings, patient-major.
/// When `adapters` is non-null every projection is routed through it.
Var qformer_forward(Graph& g, QFormerWeights& weights, const std::string& modality, const FeatureBatch& batch,
                    AdapterRegistry* adapters);

/// Single-sequence convenience form (T x native_dim in, k x d out).
Tensor qformer_forward(QFormerWeights& weights, const Tensor& features, const std::string& modality,
                       AdapterRegistry* adapters);

}  // namespace evoqf
