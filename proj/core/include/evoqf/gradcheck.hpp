#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "evoqf/graph.hpp"

namespace evoqf {

struct GradCheckEntry {
  std::string tensor;     // label of the checked tensor
  std::size_t index = 0;  // flat index within it
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;  // |analytic - numeric| / max(1, |numeric|)
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::size_t failures = 0;
  double tolerance = 0.0;

  bool passed() const noexcept { return failures == 0; }
};

struct LabeledTensor {
  std::string label;
  Tensor* tensor;
};

/// Builds a loss on a fresh graph. Non-scalar results are reduced by sum.
using GraphFunction = std::function<Var(Graph&)>;

/// Compares backward() against central differences for every entry of
/// every listed tensor. Tensors are perturbed in place and restored.
GradCheckReport grad_check(const GraphFunction& f, std::span<const LabeledTensor> wrt, double step, double tol);

/// Single-input form: f maps a variable bound to `point` to an output.
GradCheckReport grad_check(const std::function<Var(Graph&, Var)>& f, const Tensor& point, double step, double tol);

}  // namespace evoqf
