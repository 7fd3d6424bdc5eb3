#include "evoqf/fusion.hpp"

#include <array>
#include <cmath>
#include <numeric>
#include <set>

#include "evoqf/error.hpp"
#include "evoqf/ops.hpp"
#include "evoqf/rng.hpp"

namespace evoqf {

namespace {

constexpr std::array<std::pair<FusionKind, std::string_view>, 7> kKindNames{{
    {FusionKind::Early, "early"},
    {FusionKind::Late, "late"},
    {FusionKind::CrossAttention, "cross_attention"},
    {FusionKind::TensorFusion, "tensor_fusion"},
    {FusionKind::Gated, "gated"},
    {FusionKind::CrossmodalTransformer, "crossmodal_transformer"},
    {FusionKind::Smqf, "smqf"},
}};

class ParamFactory {
 public:
  ParamFactory(std::map<std::string, Tensor>& params, std::uint64_t seed) : params_(params), seed_(seed) {}

  void weight(const std::string& name, std::size_t out, std::size_t in) {
    Tensor t({out, in});
    Rng rng = Rng::named(seed_, "fusion." + name);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : t.data()) v = rng.normal(0.0, stddev);
    t.set_requires_grad(true);
    params_.emplace(name, std::move(t));
  }
  void bias(const std::string& name, std::size_t n) {
    Tensor t({n}, 0.0);
    t.set_requires_grad(true);
    params_.emplace(name, std::move(t));
  }

 private:
  std::map<std::string, Tensor>& params_;
  std::uint64_t seed_;
};

// Patient-major row order for the concatenation of several token blocks.
std::vector<std::size_t> interleave_index(const std::vector<std::size_t>& per_patient, std::size_t patients,
                                          std::vector<std::size_t>& lengths_out) {
  std::vector<std::size_t> offsets(per_patient.size(), 0);
  for (std::size_t i = 1; i < per_patient.size(); ++i) offsets[i] = offsets[i - 1] + per_patient[i - 1] * patients;
  const std::size_t width = std::accumulate(per_patient.begin(), per_patient.end(), std::size_t{0});
  std::vector<std::size_t> index;
  index.reserve(width * patients);
  for (std::size_t p = 0; p < patients; ++p) {
    for (std::size_t m = 0; m < per_patient.size(); ++m) {
      for (std::size_t r = 0; r < per_patient[m]; ++r) index.push_back(offsets[m] + p * per_patient[m] + r);
    }
  }
  lengths_out.assign(patients, width);
  return index;
}

}  // namespace

std::string_view to_string(FusionKind kind) noexcept {
  for (const auto& [k, n] : kKindNames) {
    if (k == kind) return n;
  }
  return "unknown";
}

FusionKind fusion_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  fail(ErrorCode::UnknownKind, "no fusion kind named '" + std::string(name) + "'");
}

std::vector<FusionKind> all_fusion_kinds() {
  std::vector<FusionKind> out;
  for (const auto& [k, n] : kKindNames) out.push_back(k);
  return out;
}

std::size_t FusionMethod::input_dim(const std::string& modality) const {
  for (const auto& s : inputs) {
    if (s.name == modality) return s.native_dim;
  }
  fail(ErrorCode::UnknownModality, "fusion has no input '" + modality + "'");
}

void FusionMethod::visit(const ParamVisitor& fn) {
  for (auto& [name, t] : params) fn("fusion." + name, t);
  if (kind == FusionKind::Smqf) {
    for (const auto& g : theta.groups) fn("fusion.theta." + g, theta.weight.at(g));
    fn("fusion.theta.bias", theta.bias);
  }
}

void FusionMethod::visit(const ConstParamVisitor& fn) const {
  for (const auto& [name, t] : params) fn("fusion." + name, t);
  if (kind == FusionKind::Smqf) {
    for (const auto& g : theta.groups) fn("fusion.theta." + g, theta.weight.at(g));
    fn("fusion.theta.bias", theta.bias);
  }
}

FusionMethod init_fusion(FusionKind kind, std::span<const ModalitySpec> inputs, const std::string& primary,
                         std::size_t out_dim, std::uint64_t seed, const FusionOptions& options) {
  if (inputs.empty()) fail(ErrorCode::BadConfig, "fusion needs at least one modality");
  if (out_dim == 0) fail(ErrorCode::BadConfig, "fusion out_dim must be >= 1");
  std::set<std::string> names;
  bool has_primary = false;
  for (const auto& s : inputs) {
    if (!names.insert(s.name).second) fail(ErrorCode::DuplicateModality, "fusion input '" + s.name + "' twice");
    if (s.native_dim == 0) fail(ErrorCode::BadConfig, "fusion input '" + s.name + "' has width 0");
    has_primary = has_primary || s.name == primary;
  }
  if (!has_primary) fail(ErrorCode::BadConfig, "primary '" + primary + "' is not a fusion input");
  if (kind == FusionKind::TensorFusion && inputs.size() > kTensorFusionMaxModalities) {
    fail(ErrorCode::UnsupportedArity, "tensor fusion supports at most 3 modalities, got " +
                                          std::to_string(inputs.size()));
  }

  FusionMethod m;
  m.kind = kind;
  m.inputs.assign(inputs.begin(), inputs.end());
  m.primary = primary;
  m.out_dim = out_dim;
  m.options = options;
  ParamFactory make(m.params, seed);

  const auto require_width = [&](std::size_t width) {
    for (const auto& s : inputs) {
      if (s.native_dim != width) {
        fail(ErrorCode::ShapeMismatch, std::string(to_string(kind)) + " needs every input " + std::to_string(width) +
                                           " wide; '" + s.name + "' is " + std::to_string(s.native_dim));
      }
    }
  };

  switch (kind) {
    case FusionKind::Early: {
      std::size_t total = 0;
      for (const auto& s : inputs) total += s.native_dim;
      make.weight("early.w", out_dim, total);
      make.bias("early.b", out_dim);
      break;
    }
    case FusionKind::Late:
      for (const auto& s : inputs) {
        make.weight("late." + s.name + ".w", 1, s.native_dim);
        make.bias("late." + s.name + ".b", 1);
      }
      break;
    case FusionKind::CrossAttention:
      require_width(out_dim);
      if (out_dim % options.heads) fail(ErrorCode::BadConfig, "heads must divide the embedding width");
      for (const char* p : {"xattn.q", "xattn.k", "xattn.v", "xattn.o"}) make.weight(p, out_dim, out_dim);
      break;
    case FusionKind::TensorFusion: {
      std::size_t flat = 1;
      for (const auto& s : inputs) {
        std::size_t width = s.native_dim;
        if (options.tensor_fusion_dim) {
          make.weight("tf." + s.name + ".reduce", options.tensor_fusion_dim, s.native_dim);
          make.bias("tf." + s.name + ".reduce_b", options.tensor_fusion_dim);
          width = options.tensor_fusion_dim;
        }
        flat *= width + 1;
      }
      make.weight("tf.w", out_dim, flat);
      make.bias("tf.b", out_dim);
      break;
    }
    case FusionKind::Gated:
      require_width(out_dim);
      for (const auto& s : inputs) {
        if (s.name == primary) continue;
        make.weight("gated." + s.name + ".gate", out_dim, 2 * out_dim);
        make.bias("gated." + s.name + ".gate_b", out_dim);
        make.weight("gated." + s.name + ".proj", out_dim, out_dim);
      }
      break;
    case FusionKind::CrossmodalTransformer:
      require_width(out_dim);
      if (out_dim % options.heads) fail(ErrorCode::BadConfig, "heads must divide the embedding width");
      for (const auto& s : inputs) {
        for (const char* p : {".q", ".k", ".v", ".o"}) make.weight("mult." + s.name + p, out_dim, out_dim);
      }
      make.weight("mult.out", out_dim, out_dim * inputs.size());
      make.bias("mult.out_b", out_dim);
      break;
    case FusionKind::Smqf: {
      require_width(out_dim);
      FusionConfig cfg;
      for (const auto& s : inputs) cfg.modality_order.push_back(s.name);
      cfg.primary = static_cast<std::size_t>(
          std::find(cfg.modality_order.begin(), cfg.modality_order.end(), primary) - cfg.modality_order.begin());
      cfg.embed_dim = out_dim;
      m.theta = init_theta(cfg, seed);
      break;
    }
  }
  return m;
}

Var baseline_fuse(Graph& g, FusionMethod& method, const std::map<std::string, FusionInput>& embeddings,
                  std::size_t patients) {
  if (patients == 0) fail(ErrorCode::ShapeMismatch, "empty batch");
  for (const auto& [name, in] : embeddings) {
    const std::size_t width = method.input_dim(name);
    if (in.per_patient == 0 || in.tokens.rows() != patients * in.per_patient || in.tokens.cols() != width) {
      fail(ErrorCode::ShapeMismatch, "embedding '" + name + "' is " + shape_string(in.tokens.shape()) + ", expected " +
                                         std::to_string(patients) + "*" + std::to_string(in.per_patient) + " x " +
                                         std::to_string(width));
    }
  }
  if (!embeddings.contains(method.primary)) {
    fail(ErrorCode::WrongModalityCount, "primary modality '" + method.primary + "' missing from batch");
  }
  if (method.kind != FusionKind::Smqf) {
    for (const auto& s : method.inputs) {
      if (!embeddings.contains(s.name)) {
        fail(ErrorCode::WrongModalityCount, std::string(to_string(method.kind)) + " needs modality '" + s.name + "'");
      }
    }
  }

  auto P = [&](const std::string& name) { return g.param(method.params.at(name)); };
  auto pooled = [&](const std::string& name) {
    const FusionInput& in = embeddings.at(name);
    if (in.per_patient == 1) return in.tokens;
    const std::vector<std::size_t> lengths(patients, in.per_patient);
    return segment_mean(in.tokens, lengths);
  };
  // All modalities except `self`, concatenated per patient.
  auto others_of = [&](const std::string& self, std::vector<std::size_t>& lengths) -> std::optional<Var> {
    std::vector<Var> blocks;
    std::vector<std::size_t> per;
    for (const auto& s : method.inputs) {
      if (s.name == self || !embeddings.contains(s.name)) continue;
      blocks.push_back(embeddings.at(s.name).tokens);
      per.push_back(embeddings.at(s.name).per_patient);
    }
    if (blocks.empty()) return std::nullopt;
    const auto index = interleave_index(per, patients, lengths);
    return gather_rows(concat(blocks, 0), index);
  };
  auto attend = [&](const std::string& self, const std::string& prefix) -> Var {
    const FusionInput& in = embeddings.at(self);
    std::vector<std::size_t> kv_lengths;
    auto others = others_of(self, kv_lengths);
    if (!others) return in.tokens;
    const std::vector<std::size_t> q_lengths(patients, in.per_patient);
    Var a = segment_attention(linear(in.tokens, P(prefix + "q")), linear(*others, P(prefix + "k")),
                              linear(*others, P(prefix + "v")), q_lengths, kv_lengths, method.options.heads);
    return add(in.tokens, linear(a, P(prefix + "o")));
  };

  switch (method.kind) {
    case FusionKind::Early: {
      std::vector<Var> parts;
      for (const auto& s : method.inputs) parts.push_back(pooled(s.name));
      return linear(concat(parts, 1), P("early.w"), P("early.b"));
    }
    case FusionKind::Late: {
      std::optional<Var> total;
      for (const auto& s : method.inputs) {
        Var score = linear(pooled(s.name), P("late." + s.name + ".w"), P("late." + s.name + ".b"));
        total = total ? add(*total, score) : score;
      }
      return scale(*total, 1.0 / static_cast<double>(method.inputs.size()));
    }
    case FusionKind::CrossAttention: {
      const FusionInput& in = embeddings.at(method.primary);
      const std::vector<std::size_t> lengths(patients, in.per_patient);
      return segment_mean(attend(method.primary, "xattn."), lengths);
    }
    case FusionKind::TensorFusion: {
      std::optional<Var> acc;
      Var ones = g.constant(Tensor({patients, 1}, 1.0));
      for (const auto& s : method.inputs) {
        Var z = pooled(s.name);
        if (method.options.tensor_fusion_dim) {
          z = linear(z, P("tf." + s.name + ".reduce"), P("tf." + s.name + ".reduce_b"));
        }
        const std::array<Var, 2> parts{z, ones};
        Var z1 = concat(parts, 1);
        acc = acc ? row_outer(*acc, z1) : z1;
      }
      return linear(*acc, P("tf.w"), P("tf.b"));
    }
    case FusionKind::Gated: {
      Var hp = pooled(method.primary);
      Var out = hp;
      for (const auto& s : method.inputs) {
        if (s.name == method.primary) continue;
        Var hm = pooled(s.name);
        const std::array<Var, 2> both{hp, hm};
        Var gate = sigmoid(linear(concat(both, 1), P("gated." + s.name + ".gate"), P("gated." + s.name + ".gate_b")));
        out = add(out, hadamard(gate, linear(hm, P("gated." + s.name + ".proj"))));
      }
      return out;
    }
    case FusionKind::CrossmodalTransformer: {
      std::vector<Var> parts;
      for (const auto& s : method.inputs) {
        const std::vector<std::size_t> lengths(patients, embeddings.at(s.name).per_patient);
        parts.push_back(segment_mean(attend(s.name, "mult." + s.name + "."), lengths));
      }
      return linear(concat(parts, 1), P("mult.out"), P("mult.out_b"));
    }
    case FusionKind::Smqf: {
      const FusionInput& primary = embeddings.at(method.primary);
      const std::vector<std::size_t> lengths(patients, primary.per_patient);
      Var xp = segment_mean(primary.tokens, lengths);
      std::map<std::string, Var> present;
      for (const auto& [name, in] : embeddings) {
        if (name == method.primary) continue;
        if (in.per_patient != primary.per_patient) {
          fail(ErrorCode::ShapeMismatch, "smqf needs the same query count for every modality");
        }
        present.emplace(name, in.tokens);
      }
      bool any_supporting = false;
      for (const auto& grp : method.theta.groups) any_supporting = any_supporting || present.contains(grp);
      if (!any_supporting) return xp;
      Var gated = self_gate(project_supporting(g, method.theta, present));
      // Mean over the 2k fused tokens = average of the two block means.
      return scale(add(xp, segment_mean(gated, lengths)), 0.5);
    }
  }
  fail(ErrorCode::UnknownKind, "unhandled fusion kind");
}

double late_fuse_scores(std::span<const double> scores) {
  if (scores.empty()) fail(ErrorCode::EmptyInput, "late fusion of zero scores");
  double total = 0.0;
  for (double s : scores) total += s;
  return total / static_cast<double>(scores.size());
}

}  // namespace evoqf
