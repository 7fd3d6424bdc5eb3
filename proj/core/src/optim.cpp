#include "evoqf/optim.hpp"

#include <cmath>

#include "evoqf/error.hpp"

namespace evoqf {

void AdamConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail(ErrorCode::BadConfig, "learning rate must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail(ErrorCode::BadConfig, "adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) fail(ErrorCode::BadConfig, "adam eps must be > 0");
}

Adam::Adam(AdamConfig config) : config_(config) { config_.validate(); }

void Adam::step(const std::vector<Tensor*>& params) {
  ++steps_;
  if (config_.lr == 0.0) return;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (Tensor* p : params) {
    if (!p->requires_grad() || !p->has_grad()) continue;
    auto& st = state_[p];
    if (st.m.empty()) {
      st.m.assign(p->size(), 0.0);
      st.v.assign(p->size(), 0.0);
    }
    const auto g = p->grad();
    auto x = p->data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      st.m[i] = config_.beta1 * st.m[i] + (1.0 - config_.beta1) * g[i];
      st.v[i] = config_.beta2 * st.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = st.m[i] / c1;
      const double vhat = st.v[i] / c2;
      x[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace evoqf
