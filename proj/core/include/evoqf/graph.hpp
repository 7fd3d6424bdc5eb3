#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "evoqf/tensor.hpp"

namespace evoqf {

enum class OpKind {
  // Leaves.
  Param,
  Input,
  // The named forward op set.
  Matmul,
  Add,
  Hadamard,
  Sigmoid,
  Softmax,
  LayerNorm,
  Concat,
  MeanPool,
  Linear,
  Scale,
  // Supporting ops used by the model code.
  Slice,
  RepeatRows,
  SegmentMean,
  Gelu,
  Sum,
  SegmentAttention,
  RowOuter,
  GatherRows,
  Custom,
};

std::string_view to_string(OpKind kind) noexcept;
OpKind op_kind_from_string(std::string_view name);

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid as long as the graph is.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

struct BackwardArgs {
  std::span<const Tensor* const> inputs;
  const Tensor& output;
  std::span<const double> grad_output;
  // One entry per input; nullptr where that input needs no gradient.
  std::span<double* const> grad_inputs;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

/// Tape of op records in construction order. Construction order is a valid
/// topological order because a node can only reference existing nodes.
///
/// A graph and everything it references are confined to one thread.
class Graph {
 public:
  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf bound to a parameter. When the tensor requires grad, backward()
  // writes d(loss)/d(param) into its grad buffer. Binding the same tensor
  // twice returns the same node. The tensor must outlive the graph.
  Var param(Tensor& tensor);
  // Non-owning constant leaf; the tensor must outlive the graph.
  Var input(const Tensor& tensor);
  // Owning constant leaf.
  Var constant(Tensor tensor);

  Var record(OpKind kind, std::vector<Var> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  OpKind kind(Var v) const;
  std::span<const std::size_t> inputs(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient of the last backward() loss with respect to an interior node.
  // Empty when the node did not participate.
  std::span<const double> node_grad(Var v) const;

  // Zeroes then fills grads of every bound parameter that requires grad.
  // Each node is visited at most once, in reverse construction order.
  void backward(Var loss);

  // When set, every recorded output is checked for NaN/Inf whenever its
  // inputs are finite. Defaults to on in debug builds.
  void set_check_finite(bool on) noexcept { check_finite_ = on; }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor* param = nullptr;
    bool requires_grad = false;
    BackwardFn backward;

    const Tensor& value() const { return ref ? *ref : owned; }
  };

  void check_owned(Var v) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> bound_params_;
  std::vector<std::vector<double>> grads_;
  bool check_finite_;
};

}  // namespace evoqf
