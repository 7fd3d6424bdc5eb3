#include "evoqf/smqf.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>

#include "evoqf/error.hpp"
#include "evoqf/ops.hpp"
#include "evoqf/rng.hpp"

namespace evoqf {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
Eigen::Map<const RowMat> view(const Tensor& t) {
  return {t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())};
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void FusionConfig::validate() const {
  if (modality_order.empty()) fail(ErrorCode::BadConfig, "fusion needs at least one modality");
  if (primary >= modality_order.size()) fail(ErrorCode::BadConfig, "primary index out of range");
  std::set<std::string> seen(modality_order.begin(), modality_order.end());
  if (seen.size() != modality_order.size()) fail(ErrorCode::BadConfig, "fusion modality names must be unique");
  if (queries_per_modality == 0 || embed_dim == 0) fail(ErrorCode::BadConfig, "fusion dims must be >= 1");
}

std::vector<std::string> FusionConfig::supporting() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < modality_order.size(); ++i) {
    if (i != primary) out.push_back(modality_order[i]);
  }
  return out;
}

Tensor ProjectionTheta::concatenated_weight() const {
  const std::size_t d = embed_dim();
  Tensor out({d, d * std::max<std::size_t>(groups.size(), 1)});
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Tensor& w = weight.at(groups[gi]);
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < d; ++c) out(r, gi * d + c) = w(r, c);
    }
  }
  return out;
}

void ProjectionTheta::add_group(const std::string& modality) {
  if (weight.contains(modality)) fail(ErrorCode::DuplicateModality, "theta already has group '" + modality + "'");
  const std::size_t d = embed_dim();
  Tensor w({d, d}, 0.0);
  w.set_requires_grad(true);
  groups.push_back(modality);
  weight.emplace(modality, std::move(w));
}

ProjectionTheta init_theta(const FusionConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.embed_dim;
  ProjectionTheta theta;
  theta.bias = Tensor({d}, 0.0);
  theta.bias.set_requires_grad(true);
  const auto support = config.supporting();
  const double stddev = 1.0 / std::sqrt(static_cast<double>(d * std::max<std::size_t>(support.size(), 1)));
  for (const auto& name : support) {
    Tensor w({d, d});
    Rng rng = Rng::named(seed, "smqf.theta." + name);
    for (double& v : w.data()) v = rng.normal(0.0, stddev);
    w.set_requires_grad(true);
    theta.groups.push_back(name);
    theta.weight.emplace(name, std::move(w));
  }
  return theta;
}

Tensor FusedQuery::primary_rows() const {
  const std::size_t k = queries_per_modality, d = tokens.cols();
  return Tensor({k, d}, std::vector<double>(tokens.data().begin(), tokens.data().begin() + k * d));
}

Tensor FusedQuery::gated_rows() const {
  if (!has_gated) fail(ErrorCode::WrongModalityCount, "fused query has no gated block");
  const std::size_t k = queries_per_modality, d = tokens.cols();
  return Tensor({k, d}, std::vector<double>(tokens.data().begin() + k * d, tokens.data().end()));
}

Tensor project_supporting(const ProjectionTheta& theta, std::span<const Tensor> supporting) {
  if (supporting.size() != theta.groups.size() || supporting.empty()) {
    fail(ErrorCode::WrongModalityCount, "expected " + std::to_string(theta.groups.size()) +
                                            " supporting tensors, got " + std::to_string(supporting.size()));
  }
  const std::size_t d = theta.embed_dim();
  const std::size_t k = supporting[0].rows();
  for (const Tensor& s : supporting) {
    if (s.rank() != 2 || s.rows() != k || s.cols() != d) {
      fail(ErrorCode::ShapeMismatch, "supporting queries must all be " + std::to_string(k) + "x" +
                                         std::to_string(d) + ", got " + shape_string(s.shape()));
    }
  }
  // Same accumulation order as the graph form: group by group, then bias.
  RowMat acc = RowMat::Zero(Eigen::Index(k), Eigen::Index(d));
  for (std::size_t gi = 0; gi < supporting.size(); ++gi) {
    RowMat term = view(supporting[gi]) * view(theta.weight.at(theta.groups[gi])).transpose();
    acc = gi == 0 ? term : RowMat(acc + term);
  }
  Tensor out({k, d});
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < d; ++c) out(r, c) = acc(Eigen::Index(r), Eigen::Index(c)) + theta.bias[c];
  }
  return out;
}

Tensor self_gate(const Tensor& x_bar) {
  if (!x_bar.all_finite()) fail(ErrorCode::NonFiniteInput, "self_gate input contains NaN/Inf");
  Tensor out(x_bar.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(x_bar[i]) * x_bar[i];
  return out;
}

FusedQuery fuse_queries(const Tensor& x_primary, const Tensor& x_gated) {
  if (x_primary.rank() != 2 || x_primary.shape() != x_gated.shape()) {
    fail(ErrorCode::ShapeMismatch, "fuse " + shape_string(x_primary.shape()) + " with " +
                                       shape_string(x_gated.shape()));
  }
  std::vector<double> rows(x_primary.data().begin(), x_primary.data().end());
  rows.insert(rows.end(), x_gated.data().begin(), x_gated.data().end());
  return FusedQuery{Tensor({2 * x_primary.rows(), x_primary.cols()}, std::move(rows)), x_primary.rows(), true};
}

FusedQuery fuse_queries(const Tensor& x_primary) {
  if (x_primary.rank() != 2) fail(ErrorCode::ShapeMismatch, "primary queries must be k x d");
  Tensor copy = x_primary;
  copy.set_requires_grad(false);
  copy.clear_grad();
  return FusedQuery{std::move(copy), x_primary.rows(), false};
}

FusedQuery smqf_fuse(const ProjectionTheta& theta, const FusionConfig& config,
                     const std::map<std::string, Tensor>& queries) {
  config.validate();
  auto it = queries.find(config.primary_name());
  if (it == queries.end()) fail(ErrorCode::WrongModalityCount, "primary modality queries missing");
  const auto support = config.supporting();
  if (support.empty()) return fuse_queries(it->second);
  std::vector<Tensor> supporting;
  for (const auto& name : support) {
    auto s = queries.find(name);
    if (s == queries.end()) fail(ErrorCode::WrongModalityCount, "supporting modality '" + name + "' missing");
    supporting.push_back(s->second);
  }
  return fuse_queries(it->second, self_gate(project_supporting(theta, supporting)));
}

Var project_supporting(Graph& g, ProjectionTheta& theta, const std::map<std::string, Var>& present) {
  std::optional<Var> acc;
  for (const auto& name : theta.groups) {
    auto it = present.find(name);
    if (it == present.end()) continue;
    Var term = linear(it->second, g.param(theta.weight.at(name)));
    acc = acc ? add(*acc, term) : term;
  }
  if (!acc) fail(ErrorCode::WrongModalityCount, "no supporting modality present");
  return add(*acc, g.param(theta.bias));
}

Var self_gate(Var x_bar) { return hadamard(sigmoid(x_bar), x_bar); }

}  // namespace evoqf
