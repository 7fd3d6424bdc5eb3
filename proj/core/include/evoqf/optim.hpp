#pragma once

#include <cstddef>
#include <unordered_map>
#include <vector>

#include "evoqf/tensor.hpp"

namespace evoqf {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;  // BadConfig
};

/// Adam with bias correction. State is keyed by tensor address, so the
/// tensors must stay put for the optimizer's lifetime.
class Adam {
 public:
  explicit Adam(AdamConfig config = {});

  // Updates every tensor that requires grad and holds a gradient.
  // With lr == 0 nothing is touched.
  void step(const std::vector<Tensor*>& params);

  std::size_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return config_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::unordered_map<const Tensor*, Moments> state_;
};

}  // namespace evoqf
