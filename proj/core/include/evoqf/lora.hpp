#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "evoqf/graph.hpp"

namespace evoqf {

enum class Block { SelfAttn, CrossAttn, Ffn };
enum class Proj { Q, K, V, O, FfnIn, FfnOut };

/// Address of one base projection matrix inside the Q-Former, e.g. "l0.cross.q".
struct Site {
  std::size_t layer = 0;
  Block block = Block::CrossAttn;
  Proj proj = Proj::Q;

  std::string name() const;
  static Site parse(std::string_view text);

  auto operator<=>(const Site&) const = default;
};

std::string_view to_string(Proj proj) noexcept;
Proj proj_from_string(std::string_view text);

/// Every site of a `depth`-layer Q-Former whose projection kind is in `kinds`.
/// Attention kinds expand to both the self- and cross-attention blocks.
std::vector<Site> expand_sites(std::size_t depth, std::span<const Proj> kinds);

struct AdapterKey {
  std::string modality;
  Site site;

  auto operator<=>(const AdapterKey&) const = default;
};

/// Low-rank update for one base projection W (out x in):
///   W_eff = W + (alpha / rank) * B * A,  A: rank x in,  B: out x rank.
struct LoraAdapter {
  std::string modality;
  Site site;
  std::size_t rank = 0;
  double alpha = 0.0;
  Tensor a;
  Tensor b;

  double scaling() const { return alpha / static_cast<double>(rank); }
  std::size_t parameter_count() const { return a.size() + b.size(); }
  // (alpha / rank) * B * A
  Tensor delta() const;
};

/// W + (alpha/r) B A, computed without a graph.
Tensor effective_projection(const Tensor& weight, const LoraAdapter& adapter);

/// Graph form used by forward passes. With B == 0 the result is bit-identical
/// to W because every added term is a signed zero.
Var effective_projection(Graph& g, Var weight, LoraAdapter& adapter);

struct AdapterTrainability {
  std::optional<bool> base;
  std::map<AdapterKey, bool> adapters;
};

class AdapterRegistry {
 public:
  // Modalities the model knows about; routing to any other name fails.
  void register_modality(const std::string& modality);
  bool knows(const std::string& modality) const { return modalities_.contains(modality); }

  /// Attaches a fresh adapter: A ~ N(0, 0.02^2) from `seed`, B = 0, trainable.
  /// `out_dim x in_dim` is the shape of the patched base matrix; the rank must
  /// satisfy 1 <= rank < min(out_dim, in_dim).
  LoraAdapter& attach(const std::string& modality, const Site& site, std::size_t out_dim, std::size_t in_dim,
                      std::size_t rank, double alpha, std::uint64_t seed);

  LoraAdapter* find(const std::string& modality, const Site& site);
  const LoraAdapter* find(const std::string& modality, const Site& site) const;

  std::map<AdapterKey, LoraAdapter>& adapters() { return adapters_; }
  const std::map<AdapterKey, LoraAdapter>& adapters() const { return adapters_; }
  std::size_t parameter_count(const std::string& modality) const;

  /// Plain routed projection: q * W_eff^T when an adapter exists at
  /// (modality, site), else q * W^T. W is never modified.
  Tensor route_forward(const std::string& modality, const Site& site, const Tensor& weight, const Tensor& q) const;

  /// Graph form: the projection matrix to use for this modality and site.
  Var routed_weight(Graph& g, const std::string& modality, const Site& site, Tensor& weight);

  /// Applies per-adapter flags; `base` flags go to every tensor in base_params.
  /// Throws UnknownAdapter for a key that is not attached.
  void set_trainable(const AdapterTrainability& spec, std::span<Tensor* const> base_params);

 private:
  std::set<std::string> modalities_;
  std::map<AdapterKey, LoraAdapter> adapters_;
};

}  // namespace evoqf
