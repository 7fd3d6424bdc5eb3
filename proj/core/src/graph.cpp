#include "evoqf/graph.hpp"

#include <array>
#include <utility>

#include "evoqf/error.hpp"

namespace evoqf {

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 21> kOpNames{{
    {OpKind::Param, "param"},
    {OpKind::Input, "input"},
    {OpKind::Matmul, "matmul"},
    {OpKind::Add, "add"},
    {OpKind::Hadamard, "hadamard"},
    {OpKind::Sigmoid, "sigmoid"},
    {OpKind::Softmax, "softmax"},
    {OpKind::LayerNorm, "layernorm"},
    {OpKind::Concat, "concat"},
    {OpKind::MeanPool, "mean_pool"},
    {OpKind::Linear, "linear"},
    {OpKind::Scale, "scale"},
    {OpKind::Slice, "slice"},
    {OpKind::RepeatRows, "repeat_rows"},
    {OpKind::SegmentMean, "segment_mean"},
    {OpKind::Gelu, "gelu"},
    {OpKind::Sum, "sum"},
    {OpKind::SegmentAttention, "segment_attention"},
    {OpKind::RowOuter, "row_outer"},
    {OpKind::GatherRows, "gather_rows"},
    {OpKind::Custom, "custom"},
}};

}  // namespace

std::string_view to_string(OpKind kind) noexcept {
  for (const auto& [k, name] : kOpNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

OpKind op_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kOpNames) {
    if (n == name) return k;
  }
  fail(ErrorCode::UnknownKind, "no op named '" + std::string(name) + "'");
}

const Tensor& Var::value() const {
  if (!graph) fail(ErrorCode::DetachedLoss, "var is not attached to a graph");
  return graph->value(*this);
}

Graph::Graph() {
#ifdef NDEBUG
  check_finite_ = false;
#else
  check_finite_ = true;
#endif
}

void Graph::check_owned(Var v) const {
  if (v.graph != this || v.id >= nodes_.size()) {
    fail(ErrorCode::DetachedLoss, "var does not belong to this graph");
  }
}

Var Graph::param(Tensor& tensor) {
  if (auto it = bound_params_.find(&tensor); it != bound_params_.end()) return Var{this, it->second};
  Node node{OpKind::Param, {}, {}, &tensor, &tensor, tensor.requires_grad(), {}};
  nodes_.push_back(std::move(node));
  bound_params_.emplace(&tensor, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Graph::input(const Tensor& tensor) {
  nodes_.push_back(Node{OpKind::Input, {}, {}, &tensor, nullptr, false, {}});
  return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Tensor tensor) {
  nodes_.push_back(Node{OpKind::Input, {}, std::move(tensor), nullptr, nullptr, false, {}});
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(OpKind kind, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  Node node{kind, {}, std::move(value), nullptr, nullptr, false, std::move(backward)};
  node.inputs.reserve(inputs.size());
  bool inputs_finite = true;
  for (const Var& in : inputs) {
    check_owned(in);
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
    if (check_finite_) inputs_finite = inputs_finite && nodes_[in.id].value().all_finite();
  }
  if (check_finite_ && inputs_finite && !node.owned.all_finite()) {
    fail(ErrorCode::NonFiniteOutput, std::string(to_string(kind)) + " produced a non-finite value");
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Graph::value(Var v) const {
  check_owned(v);
  return nodes_[v.id].value();
}

bool Graph::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id].requires_grad;
}

OpKind Graph::kind(Var v) const {
  check_owned(v);
  return nodes_[v.id].kind;
}

std::span<const std::size_t> Graph::inputs(Var v) const {
  check_owned(v);
  return nodes_[v.id].inputs;
}

std::span<const double> Graph::node_grad(Var v) const {
  check_owned(v);
  if (v.id >= grads_.size()) return {};
  return grads_[v.id];
}

void Graph::backward(Var loss) {
  check_owned(loss);
  const Node& root = nodes_[loss.id];
  if (root.value().size() != 1) {
    fail(ErrorCode::NotScalarLoss, "loss has shape " + shape_string(root.value().shape()));
  }

  for (Node& node : nodes_) {
    if (node.param && node.requires_grad) node.param->zero_grad();
  }

  grads_.assign(nodes_.size(), {});
  if (root.requires_grad) grads_[loss.id].assign(1, 1.0);

  std::vector<const Tensor*> in_values;
  std::vector<double*> in_grads;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || grads_[id].empty()) continue;
    if (node.kind == OpKind::Param) {
      auto dst = node.param->mutable_grad();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += grads_[id][i];
      continue;
    }
    if (!node.backward) continue;

    in_values.clear();
    in_grads.clear();
    for (std::size_t in : node.inputs) {
      in_values.push_back(&nodes_[in].value());
      if (nodes_[in].requires_grad) {
        if (grads_[in].empty()) grads_[in].assign(nodes_[in].value().size(), 0.0);
        in_grads.push_back(grads_[in].data());
      } else {
        in_grads.push_back(nullptr);
      }
    }
    node.backward(BackwardArgs{in_values, node.value(), grads_[id], in_grads});
  }
}

}  // namespace evoqf
