#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace nmsr {

/// Sum over the (2r+1)^2 square around every pixel, truncated at the border
/// (out-of-bounds pixels are simply absent from the window).
std::vector<double> box_sum(std::span<const double> plane, std::int64_t height,
                            std::int64_t width, int radius);

/// Centred second-order statistics of two images over truncated windows.
struct WindowStats {
  std::vector<double> count;
  std::vector<double> mean_a;
  std::vector<double> mean_b;
  std::vector<double> var_a;   // sum (a - mean_a)^2
  std::vector<double> var_b;   // sum (b - mean_b)^2
  std::vector<double> cross;   // sum (a - mean_a)(b - mean_b)
};

WindowStats window_stats(std::span<const double> a, std::span<const double> b,
                         std::int64_t height, std::int64_t width, int radius);

/// Per-pixel squared normalized cross-correlation cross^2 / (var_a var_b + eps).
/// Shared by the reconstruction loss and the Mean CC metric.
std::vector<double> local_ncc_squared(const WindowStats& stats, double epsilon);

}  // namespace nmsr
