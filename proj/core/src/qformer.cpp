#include "evoqf/qformer.hpp"

#include <cmath>
#include <set>

#include "evoqf/error.hpp"
#include "evoqf/ops.hpp"
#include "evoqf/rng.hpp"

namespace evoqf {

namespace {

Tensor gaussian(std::uint64_t seed, const std::string& name, Shape shape, double stddev) {
  Tensor t(std::move(shape));
  Rng rng = Rng::named(seed, name);
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  t.set_requires_grad(true);
  return t;
}

Tensor filled(Shape shape, double value) {
  Tensor t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

std::string layer_prefix(std::size_t l) { return "qformer.l" + std::to_string(l) + "."; }

template <class Layer, class Fn>
void visit_layer(const std::string& p, Layer& L, Fn&& fn) {
  fn(p + "ln_self.g", L.ln_self_g);
  fn(p + "ln_self.b", L.ln_self_b);
  fn(p + "ln_cross.g", L.ln_cross_g);
  fn(p + "ln_cross.b", L.ln_cross_b);
  fn(p + "ln_ffn.g", L.ln_ffn_g);
  fn(p + "ln_ffn.b", L.ln_ffn_b);
  fn(p + "self.q", L.self_attn.wq);
  fn(p + "self.k", L.self_attn.wk);
  fn(p + "self.v", L.self_attn.wv);
  fn(p + "self.o", L.self_attn.wo);
  fn(p + "cross.q", L.cross_attn.wq);
  fn(p + "cross.k", L.cross_attn.wk);
  fn(p + "cross.v", L.cross_attn.wv);
  fn(p + "cross.o", L.cross_attn.wo);
  fn(p + "ffn.in", L.ffn.w_in);
  fn(p + "ffn.in_bias", L.ffn.b_in);
  fn(p + "ffn.out", L.ffn.w_out);
  fn(p + "ffn.out_bias", L.ffn.b_out);
}

template <class W, class Fn>
void visit_shared_impl(W& w, Fn&& fn) {
  for (std::size_t l = 0; l < w.layers.size(); ++l) visit_layer(layer_prefix(l), w.layers[l], fn);
  fn("qformer.out_ln.g", w.out_ln_g);
  fn("qformer.out_ln.b", w.out_ln_b);
}

template <class M, class Fn>
void visit_modality_impl(const std::string& name, M& m, Fn&& fn) {
  fn("modality." + name + ".queries", m.queries);
  fn("modality." + name + ".in_w", m.in_w);
  fn("modality." + name + ".in_b", m.in_b);
}

}  // namespace

void QFormerConfig::validate() const {
  if (depth == 0 || embed_dim == 0 || heads == 0 || queries_per_modality == 0 || ffn_multiplier == 0) {
    fail(ErrorCode::BadConfig, "q-former config fields must all be >= 1");
  }
  if (embed_dim % heads != 0) {
    fail(ErrorCode::BadConfig, "embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " +
                                   std::to_string(heads));
  }
}

const ModalityWeights& QFormerWeights::modality(const std::string& name) const {
  auto it = modalities.find(name);
  if (it == modalities.end()) fail(ErrorCode::UnknownModality, "modality '" + name + "' is not registered");
  return it->second;
}

ModalityWeights& QFormerWeights::modality(const std::string& name) {
  auto it = modalities.find(name);
  if (it == modalities.end()) fail(ErrorCode::UnknownModality, "modality '" + name + "' is not registered");
  return it->second;
}

Tensor& QFormerWeights::site_weight(const Site& site) {
  if (site.layer >= layers.size()) fail(ErrorCode::BadConfig, "site " + site.name() + " beyond model depth");
  LayerWeights& L = layers[site.layer];
  if (site.block == Block::Ffn) return site.proj == Proj::FfnIn ? L.ffn.w_in : L.ffn.w_out;
  AttentionWeights& A = site.block == Block::SelfAttn ? L.self_attn : L.cross_attn;
  switch (site.proj) {
    case Proj::Q: return A.wq;
    case Proj::K: return A.wk;
    case Proj::V: return A.wv;
    case Proj::O: return A.wo;
    default: break;
  }
  fail(ErrorCode::BadConfig, "site " + site.name() + " is not a projection");
}

void QFormerWeights::visit_shared(const ParamVisitor& fn) { visit_shared_impl(*this, fn); }
void QFormerWeights::visit_shared(const ConstParamVisitor& fn) const { visit_shared_impl(*this, fn); }
void QFormerWeights::visit_modality(const std::string& name, const ParamVisitor& fn) {
  visit_modality_impl(name, modality(name), fn);
}
void QFormerWeights::visit_modality(const std::string& name, const ConstParamVisitor& fn) const {
  visit_modality_impl(name, modality(name), fn);
}

QFormerWeights init_qformer(const QFormerConfig& config, std::span<const ModalitySpec> modalities, std::uint64_t seed) {
  config.validate();
  std::set<std::string> seen;
  for (const auto& m : modalities) {
    if (!seen.insert(m.name).second) fail(ErrorCode::DuplicateModality, "modality '" + m.name + "' listed twice");
    if (m.native_dim == 0) fail(ErrorCode::BadConfig, "modality '" + m.name + "' has native_dim 0");
  }

  const std::size_t d = config.embed_dim;
  const std::size_t hidden = config.ffn_multiplier * d;
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));

  QFormerWeights w;
  w.config = config;
  w.out_ln_g = filled({d}, 1.0);
  w.out_ln_b = filled({d}, 0.0);
  for (std::size_t l = 0; l < config.depth; ++l) {
    const std::string p = layer_prefix(l);
    LayerWeights L;
    L.ln_self_g = filled({d}, 1.0);
    L.ln_self_b = filled({d}, 0.0);
    L.ln_cross_g = filled({d}, 1.0);
    L.ln_cross_b = filled({d}, 0.0);
    L.ln_ffn_g = filled({d}, 1.0);
    L.ln_ffn_b = filled({d}, 0.0);
    for (auto [attn, tag] : {std::pair{&L.self_attn, "self"}, std::pair{&L.cross_attn, "cross"}}) {
      attn->wq = gaussian(seed, p + tag + ".q", {d, d}, proj_std);
      attn->wk = gaussian(seed, p + tag + ".k", {d, d}, proj_std);
      attn->wv = gaussian(seed, p + tag + ".v", {d, d}, proj_std);
      attn->wo = filled({d, d}, 0.0);
    }
    L.ffn.w_in = gaussian(seed, p + "ffn.in", {hidden, d}, proj_std);
    L.ffn.b_in = filled({hidden}, 0.0);
    L.ffn.w_out = gaussian(seed, p + "ffn.out", {d, hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)));
    L.ffn.b_out = filled({d}, 0.0);
    w.layers.push_back(std::move(L));
  }
  for (const auto& m : modalities) add_qformer_modality(w, m, seed);
  return w;
}

void add_qformer_modality(QFormerWeights& weights, const ModalitySpec& spec, std::uint64_t seed) {
  if (weights.has_modality(spec.name)) {
    fail(ErrorCode::DuplicateModality, "modality '" + spec.name + "' is already registered");
  }
  if (spec.native_dim == 0) fail(ErrorCode::BadConfig, "modality '" + spec.name + "' has native_dim 0");
  const std::size_t d = weights.config.embed_dim;
  const std::size_t k = weights.config.queries_per_modality;
  ModalityWeights m;
  m.native_dim = spec.native_dim;
  m.queries = gaussian(seed, "modality." + spec.name + ".queries", {k, d}, 1.0);
  m.in_w = gaussian(seed, "modality." + spec.name + ".in_w", {d, spec.native_dim},
                    1.0 / std::sqrt(static_cast<double>(spec.native_dim)));
  m.in_b = filled({d}, 0.0);
  weights.modalities.emplace(spec.name, std::move(m));
  weights.modality_order.push_back(spec.name);
}

Var qformer_forward(Graph& g, QFormerWeights& w, const std::string& modality, const FeatureBatch& batch,
                    AdapterRegistry* adapters) {
  ModalityWeights& mw = w.modality(modality);
  if (adapters && !adapters->knows(modality)) {
    fail(ErrorCode::UnknownModality, "modality '" + modality + "' is not known to the adapter registry");
  }
  if (batch.lengths.empty() || batch.features.empty()) fail(ErrorCode::EmptyFeatures, "no feature tokens");
  std::size_t total = 0;
  for (std::size_t len : batch.lengths) {
    if (len == 0) fail(ErrorCode::EmptyFeatures, "a patient has an empty '" + modality + "' sequence");
    if (w.config.max_tokens && len > w.config.max_tokens) {
      fail(ErrorCode::ShapeMismatch, "sequence of " + std::to_string(len) + " tokens exceeds cap " +
                                         std::to_string(w.config.max_tokens));
    }
    total += len;
  }
  if (batch.features.rows() != total || batch.features.cols() != mw.native_dim) {
    fail(ErrorCode::ShapeMismatch, "features " + shape_string(batch.features.shape()) + " for " +
                                       std::to_string(total) + " tokens of native dim " +
                                       std::to_string(mw.native_dim));
  }
  if (!batch.features.all_finite()) fail(ErrorCode::NonFiniteInput, "features contain NaN/Inf");

  const std::size_t patients = batch.patients();
  const std::size_t k = w.config.queries_per_modality;
  const std::size_t heads = w.config.heads;
  const std::vector<std::size_t> query_lengths(patients, k);

  auto proj = [&](Var x, const Site& site) {
    Tensor& base = w.site_weight(site);
    Var weight = adapters ? adapters->routed_weight(g, modality, site, base) : g.param(base);
    return linear(x, weight);
  };
  auto ln = [&](Var x, Tensor& gamma, Tensor& beta) { return layernorm(x, g.param(gamma), g.param(beta)); };

  Var feats = linear(g.input(batch.features), g.param(mw.in_w), g.param(mw.in_b));
  Var q = repeat_rows(g.param(mw.queries), patients);

  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    LayerWeights& L = w.layers[l];

    Var h = ln(q, L.ln_self_g, L.ln_self_b);
    Var a = segment_attention(proj(h, {l, Block::SelfAttn, Proj::Q}), proj(h, {l, Block::SelfAttn, Proj::K}),
                              proj(h, {l, Block::SelfAttn, Proj::V}), query_lengths, query_lengths, heads);
    q = add(q, proj(a, {l, Block::SelfAttn, Proj::O}));

    h = ln(q, L.ln_cross_g, L.ln_cross_b);
    a = segment_attention(proj(h, {l, Block::CrossAttn, Proj::Q}), proj(feats, {l, Block::CrossAttn, Proj::K}),
                          proj(feats, {l, Block::CrossAttn, Proj::V}), query_lengths, batch.lengths, heads);
    q = add(q, proj(a, {l, Block::CrossAttn, Proj::O}));

    h = ln(q, L.ln_ffn_g, L.ln_ffn_b);
    Var f = gelu(add(proj(h, {l, Block::Ffn, Proj::FfnIn}), g.param(L.ffn.b_in)));
    q = add(q, add(proj(f, {l, Block::Ffn, Proj::FfnOut}), g.param(L.ffn.b_out)));
  }
  return ln(q, w.out_ln_g, w.out_ln_b);
}

Tensor qformer_forward(QFormerWeights& weights, const Tensor& features, const std::string& modality,
                       AdapterRegistry* adapters) {
  if (features.empty()) fail(ErrorCode::EmptyFeatures, "no feature tokens");
  FeatureBatch batch{features, {features.rows()}};
  Graph g;
  return qformer_forward(g, weights, modality, batch, adapters).value();
}

}  // namespace evoqf
