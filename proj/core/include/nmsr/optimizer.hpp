#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nmsr/tensor.hpp"

namespace nmsr {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Adam with bias correction and a constant learning rate.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Updates every tensor in place from its gradient. The first call fixes
  /// the parameter layout; later calls must pass tensors of the same shapes.
  void step(std::span<Tensor> params);

  const AdamConfig& config() const { return cfg_; }
  const AdamState& state() const { return state_; }

 private:
  AdamConfig cfg_;
  AdamState state_;
};

}  // namespace nmsr
