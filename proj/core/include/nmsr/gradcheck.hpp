#pragma once

#include <functional>
#include <span>
#include <vector>

#include "nmsr/tensor.hpp"

namespace nmsr {

/// Builds a scalar loss from tensors captured by the closure.
using LossBuilder = std::function<Tensor(Graph&)>;

struct GradCheckResult {
  // ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2), one per input.
  std::vector<double> relative_error;
  double max_relative_error = 0.0;
};

/// Compares backward() against central differences, element by element, for
/// every tensor in `inputs`. Inputs are marked as requiring gradients; their
/// values are restored afterwards.
GradCheckResult gradcheck(const LossBuilder& build, std::span<Tensor> inputs, double step = 1e-5);

/// Same comparison along one seeded random direction per input. Useful when a
/// full element-wise sweep is too slow.
GradCheckResult directional_gradcheck(const LossBuilder& build, std::span<Tensor> inputs,
                                      std::uint64_t seed, double step = 1e-5);

}  // namespace nmsr
