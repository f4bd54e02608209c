#pragma once

#include <optional>

#include "nmsr/image.hpp"
#include "nmsr/tensor.hpp"

namespace nmsr {

struct LossConfig {
  int ncc_radius = 6;
  double lambda = 10.0;
  double epsilon = 1e-5;
  /// When present, only centres inside the mask contribute to the NCC sum.
  std::optional<Mask> region_mask;

  void validate() const;
};

/// Negative local NCC: -sum_p cross_p^2 / (var_M,p var_I,p + eps) over
/// border-truncated (2r+1)^2 windows. Inputs are [1,1,H,W].
Tensor ncc_loss(Graph& g, const Tensor& moving, const Tensor& fixed, const LossConfig& cfg);

/// Mean of squared forward differences along x plus the same along y, each
/// averaged over its valid sites and both field components. Input [1,2,H,W].
Tensor smoothness_loss(Graph& g, const Tensor& flow);

struct LossTerms {
  Tensor total;
  Tensor ncc;
  Tensor smooth;
};

/// ncc_loss(moving_warped, fixed) + lambda * smoothness_loss(flow).
LossTerms total_loss(Graph& g, const Tensor& moving_warped, const Tensor& fixed,
                     const Tensor& flow, const LossConfig& cfg);

}  // namespace nmsr
