#include "evoqf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "evoqf/error.hpp"
#include "evoqf/ops.hpp"

namespace evoqf {

namespace {

Var reduce_to_scalar(Var out) { return out.value().size() == 1 ? out : sum(out); }

double evaluate(const GraphFunction& f) {
  Graph g;
  const double v = reduce_to_scalar(f(g)).value().item();
  if (!std::isfinite(v)) fail(ErrorCode::NonFiniteOutput, "function value is not finite");
  return v;
}

}  // namespace

GradCheckReport grad_check(const GraphFunction& f, std::span<const LabeledTensor> wrt, double step, double tol) {
  if (!(step > 0.0)) fail(ErrorCode::BadConfig, "finite-difference step must be positive");

  std::vector<bool> saved_flags;
  for (const auto& lt : wrt) {
    saved_flags.push_back(lt.tensor->requires_grad());
    lt.tensor->set_requires_grad(true);
  }

  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    Var loss = reduce_to_scalar(f(g));
    if (!std::isfinite(loss.value().item())) fail(ErrorCode::NonFiniteOutput, "function value is not finite");
    g.backward(loss);
    for (const auto& lt : wrt) {
      auto gr = lt.tensor->grad();
      // A tensor the function never bound has zero gradient.
      analytic.emplace_back(gr.empty() ? std::vector<double>(lt.tensor->size(), 0.0)
                                       : std::vector<double>(gr.begin(), gr.end()));
    }
  }

  GradCheckReport report;
  report.tolerance = tol;
  for (std::size_t t = 0; t < wrt.size(); ++t) {
    Tensor& x = *wrt[t].tensor;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + step;
      const double plus = evaluate(f);
      x[i] = orig - step;
      const double minus = evaluate(f);
      x[i] = orig;
      const double numeric = (plus - minus) / (2.0 * step);
      GradCheckEntry e{wrt[t].label, i, analytic[t][i], numeric, 0.0};
      e.rel_error = std::abs(e.analytic - e.numeric) / std::max(1.0, std::abs(e.numeric));
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      if (e.rel_error > tol) ++report.failures;
      report.entries.push_back(std::move(e));
    }
  }

  for (std::size_t t = 0; t < wrt.size(); ++t) wrt[t].tensor->set_requires_grad(saved_flags[t]);
  return report;
}

GradCheckReport grad_check(const std::function<Var(Graph&, Var)>& f, const Tensor& point, double step, double tol) {
  Tensor x = point;
  x.clear_grad();
  LabeledTensor target{"x", &x};
  return grad_check([&](Graph& g) { return f(g, g.param(x)); }, std::span<const LabeledTensor>(&target, 1), step,
                    tol);
}

}  // namespace evoqf
