#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nmsr {

struct SelftestCheck {
  std::string suite;
  std::string name;
  double value = 0.0;      // measured error
  double tolerance = 0.0;  // pass when value < tolerance (or value <= 0 for exact checks)
  bool passed = false;
};

struct SelftestReport {
  std::vector<SelftestCheck> checks;
  double seconds = 0.0;

  bool passed() const;
  std::vector<SelftestCheck> failures() const;
  std::string to_text() const;
};

struct SelftestOptions {
  std::uint64_t seed = 20240601;
  /// Negative control: corrupts the conv2d backward while the suite runs.
  bool corrupt_conv_backward = false;
};

/// Every differentiable op and the U-Net + loss composite against central
/// differences on randomized small instances.
SelftestReport gradient_suite(const SelftestOptions& options = {});
/// Windowed NCC (loss and Mean CC kernels) against the naive per-window sums.
SelftestReport oracle_suite(const SelftestOptions& options = {});
/// Composition and promotion identities of displacement fields.
SelftestReport field_algebra_suite(const SelftestOptions& options = {});

SelftestReport run_selftest(const SelftestOptions& options = {});

/// Naive O(N w^2) reference for the reconstruction loss: -sum over masked
/// centres of cross^2 / (var_m var_f + eps). Empty mask means every pixel.
double brute_force_ncc_loss(const std::vector<double>& moving, const std::vector<double>& fixed,
                            std::int64_t height, std::int64_t width, int radius, double epsilon,
                            const std::vector<unsigned char>& mask = {});

}  // namespace nmsr
