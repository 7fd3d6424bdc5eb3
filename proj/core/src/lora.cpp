#include "evoqf/lora.hpp"

#include <Eigen/Dense>
#include <array>
#include <string>

#include "evoqf/error.hpp"
#include "evoqf/ops.hpp"
#include "evoqf/rng.hpp"

namespace evoqf {

namespace {

constexpr double kLoraInitStd = 0.02;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
Eigen::Map<const RowMat> view(const Tensor& t) { return {t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }

std::string_view block_name(Block b) {
  switch (b) {
    case Block::SelfAttn: return "self";
    case Block::CrossAttn: return "cross";
    case Block::Ffn: return "ffn";
  }
  return "?";
}

}  // namespace

std::string_view to_string(Proj proj) noexcept {
  switch (proj) {
    case Proj::Q: return "q";
    case Proj::K: return "k";
    case Proj::V: return "v";
    case Proj::O: return "o";
    case Proj::FfnIn: return "in";
    case Proj::FfnOut: return "out";
  }
  return "?";
}

Proj proj_from_string(std::string_view text) {
  for (Proj p : {Proj::Q, Proj::K, Proj::V, Proj::O, Proj::FfnIn, Proj::FfnOut}) {
    if (to_string(p) == text) return p;
  }
  if (text == "ffn_in") return Proj::FfnIn;
  if (text == "ffn_out") return Proj::FfnOut;
  fail(ErrorCode::BadConfig, "unknown projection '" + std::string(text) + "'");
}

std::string Site::name() const {
  return "l" + std::to_string(layer) + "." + std::string(block_name(block)) + "." + std::string(to_string(proj));
}

Site Site::parse(std::string_view text) {
  const auto bad = [&]() -> Site { fail(ErrorCode::BadConfig, "malformed site '" + std::string(text) + "'"); };
  if (text.size() < 2 || text[0] != 'l') return bad();
  const auto dot1 = text.find('.');
  const auto dot2 = text.find('.', dot1 == std::string_view::npos ? dot1 : dot1 + 1);
  if (dot1 == std::string_view::npos || dot2 == std::string_view::npos) return bad();
  Site s;
  try {
    s.layer = std::stoul(std::string(text.substr(1, dot1 - 1)));
  } catch (const std::exception&) {
    return bad();
  }
  const auto block = text.substr(dot1 + 1, dot2 - dot1 - 1);
  if (block == "self") {
    s.block = Block::SelfAttn;
  } else if (block == "cross") {
    s.block = Block::CrossAttn;
  } else if (block == "ffn") {
    s.block = Block::Ffn;
  } else {
    return bad();
  }
  s.proj = proj_from_string(text.substr(dot2 + 1));
  const bool ffn_proj = s.proj == Proj::FfnIn || s.proj == Proj::FfnOut;
  if (ffn_proj != (s.block == Block::Ffn)) return bad();
  return s;
}

std::vector<Site> expand_sites(std::size_t depth, std::span<const Proj> kinds) {
  std::vector<Site> sites;
  for (std::size_t l = 0; l < depth; ++l) {
    for (Block b : {Block::SelfAttn, Block::CrossAttn, Block::Ffn}) {
      for (Proj p : kinds) {
        const bool ffn_proj = p == Proj::FfnIn || p == Proj::FfnOut;
        if (ffn_proj == (b == Block::Ffn)) sites.push_back(Site{l, b, p});
      }
    }
  }
  return sites;
}

Tensor LoraAdapter::delta() const {
  Tensor out({b.rows(), a.cols()});
  Eigen::Map<RowMat>(out.data().data(), Eigen::Index(b.rows()), Eigen::Index(a.cols())).noalias() =
      (view(b) * view(a)) * scaling();
  return out;
}

Tensor effective_projection(const Tensor& weight, const LoraAdapter& adapter) {
  if (weight.rank() != 2 || weight.rows() != adapter.b.rows() || weight.cols() != adapter.a.cols()) {
    fail(ErrorCode::ShapeMismatch, "adapter " + shape_string(adapter.b.shape()) + "x" + shape_string(adapter.a.shape()) +
                                       " does not patch " + shape_string(weight.shape()));
  }
  Tensor out = weight;
  out.set_requires_grad(false);
  out.clear_grad();
  const Tensor d = adapter.delta();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
  return out;
}

Var effective_projection(Graph& g, Var weight, LoraAdapter& adapter) {
  const Tensor& w = weight.value();
  if (w.rank() != 2 || w.rows() != adapter.b.rows() || w.cols() != adapter.a.cols()) {
    fail(ErrorCode::ShapeMismatch, "adapter does not patch " + shape_string(w.shape()));
  }
  Var delta = scale(matmul(g.param(adapter.b), g.param(adapter.a)), adapter.scaling());
  return add(weight, delta);
}

void AdapterRegistry::register_modality(const std::string& modality) { modalities_.insert(modality); }

LoraAdapter& AdapterRegistry::attach(const std::string& modality, const Site& site, std::size_t out_dim,
                                     std::size_t in_dim, std::size_t rank, double alpha, std::uint64_t seed) {
  if (!knows(modality)) fail(ErrorCode::UnknownModality, "modality '" + modality + "' is not registered");
  AdapterKey key{modality, site};
  if (adapters_.contains(key)) {
    fail(ErrorCode::DuplicateAdapter, "adapter already attached at (" + modality + ", " + site.name() + ")");
  }
  if (rank == 0 || rank >= std::min(out_dim, in_dim)) {
    fail(ErrorCode::RankTooLarge, "rank " + std::to_string(rank) + " must satisfy 1 <= r < " +
                                      std::to_string(std::min(out_dim, in_dim)));
  }
  if (!(alpha > 0.0)) fail(ErrorCode::BadConfig, "lora alpha must be positive");

  LoraAdapter adapter;
  adapter.modality = modality;
  adapter.site = site;
  adapter.rank = rank;
  adapter.alpha = alpha;
  adapter.a = Tensor({rank, in_dim});
  adapter.b = Tensor({out_dim, rank});
  Rng rng = Rng::named(seed, "lora." + modality + "." + site.name());
  for (double& v : adapter.a.data()) v = rng.normal(0.0, kLoraInitStd);
  adapter.a.set_requires_grad(true);
  adapter.b.set_requires_grad(true);
  return adapters_.emplace(std::move(key), std::move(adapter)).first->second;
}

LoraAdapter* AdapterRegistry::find(const std::string& modality, const Site& site) {
  auto it = adapters_.find(AdapterKey{modality, site});
  return it == adapters_.end() ? nullptr : &it->second;
}

const LoraAdapter* AdapterRegistry::find(const std::string& modality, const Site& site) const {
  auto it = adapters_.find(AdapterKey{modality, site});
  return it == adapters_.end() ? nullptr : &it->second;
}

std::size_t AdapterRegistry::parameter_count(const std::string& modality) const {
  std::size_t total = 0;
  for (const auto& [key, adapter] : adapters_) {
    if (key.modality == modality) total += adapter.parameter_count();
  }
  return total;
}

Tensor AdapterRegistry::route_forward(const std::string& modality, const Site& site, const Tensor& weight,
                                      const Tensor& q) const {
  if (!knows(modality)) fail(ErrorCode::UnknownModality, "modality '" + modality + "' is not registered");
  if (weight.rank() != 2 || q.cols() != weight.cols()) {
    fail(ErrorCode::ShapeMismatch, "projection " + shape_string(weight.shape()) + " on " + shape_string(q.shape()));
  }
  const LoraAdapter* adapter = find(modality, site);
  const Tensor effective = adapter ? effective_projection(weight, *adapter) : Tensor();
  const Tensor& w = adapter ? effective : weight;
  Tensor out(q.rank() == 1 ? Shape{w.rows()} : Shape{q.rows(), w.rows()});
  Eigen::Map<RowMat>(out.data().data(), Eigen::Index(q.rows()), Eigen::Index(w.rows())).noalias() =
      view(q) * view(w).transpose();
  return out;
}

Var AdapterRegistry::routed_weight(Graph& g, const std::string& modality, const Site& site, Tensor& weight) {
  if (!knows(modality)) fail(ErrorCode::UnknownModality, "modality '" + modality + "' is not registered");
  Var w = g.param(weight);
  LoraAdapter* adapter = find(modality, site);
  return adapter ? effective_projection(g, w, *adapter) : w;
}

void AdapterRegistry::set_trainable(const AdapterTrainability& spec, std::span<Tensor* const> base_params) {
  for (const auto& [key, flag] : spec.adapters) {
    if (!adapters_.contains(key)) {
      fail(ErrorCode::UnknownAdapter, "no adapter at (" + key.modality + ", " + key.site.name() + ")");
    }
  }
  if (spec.base) {
    for (Tensor* t : base_params) t->set_requires_grad(*spec.base);
  }
  for (const auto& [key, flag] : spec.adapters) {
    LoraAdapter& a = adapters_.at(key);
    a.a.set_requires_grad(flag);
    a.b.set_requires_grad(flag);
  }
}

}  // namespace evoqf
