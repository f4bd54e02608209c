#include "nmsr/window_stats.hpp"

#include <algorithm>

#include "nmsr/error.hpp"

namespace nmsr {

std::vector<double> box_sum(std::span<const double> plane, std::int64_t height,
                            std::int64_t width, int radius) {
  if (radius < 0) throw ContractError("box_sum: radius must be non-negative");
  // Direct separable sums (no running subtraction) keep the result free of
  // cancellation error.
  std::vector<double> rows(plane.size());
  for (std::int64_t y = 0; y < height; ++y) {
    const double* src = plane.data() + y * width;
    double* dst = rows.data() + y * width;
    for (std::int64_t x = 0; x < width; ++x) {
      const auto lo = std::max<std::int64_t>(0, x - radius);
      const auto hi = std::min<std::int64_t>(width - 1, x + radius);
      double acc = 0.0;
      for (auto i = lo; i <= hi; ++i) acc += src[i];
      dst[x] = acc;
    }
  }
  std::vector<double> out(plane.size(), 0.0);
  for (std::int64_t y = 0; y < height; ++y) {
    const auto lo = std::max<std::int64_t>(0, y - radius);
    const auto hi = std::min<std::int64_t>(height - 1, y + radius);
    double* dst = out.data() + y * width;
    for (auto j = lo; j <= hi; ++j) {
      const double* src = rows.data() + j * width;
      for (std::int64_t x = 0; x < width; ++x) dst[x] += src[x];
    }
  }
  return out;
}

WindowStats window_stats(std::span<const double> a, std::span<const double> b,
                         std::int64_t height, std::int64_t width, int radius) {
  const auto n = static_cast<std::size_t>(height * width);
  if (a.size() != n || b.size() != n) throw InvalidShape("window_stats: plane size mismatch");
  if (radius < 1) throw ContractError("window_stats: radius must be >= 1");
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  WindowStats s;
  const std::vector<double> ones(n, 1.0);
  s.count = box_sum(ones, height, width, radius);
  auto sa = box_sum(a, height, width, radius);
  auto sb = box_sum(b, height, width, radius);
  auto saa = box_sum(aa, height, width, radius);
  auto sbb = box_sum(bb, height, width, radius);
  auto sab = box_sum(ab, height, width, radius);
  s.mean_a.resize(n);
  s.mean_b.resize(n);
  s.var_a.resize(n);
  s.var_b.resize(n);
  s.cross.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = sa[i] / s.count[i];
    const double mb = sb[i] / s.count[i];
    s.mean_a[i] = ma;
    s.mean_b[i] = mb;
    s.var_a[i] = std::max(0.0, saa[i] - ma * sa[i]);
    s.var_b[i] = std::max(0.0, sbb[i] - mb * sb[i]);
    s.cross[i] = sab[i] - ma * sb[i];
  }
  return s;
}

std::vector<double> local_ncc_squared(const WindowStats& stats, double epsilon) {
  std::vector<double> cc(stats.cross.size());
  for (std::size_t i = 0; i < cc.size(); ++i) {
    cc[i] = stats.cross[i] * stats.cross[i] / (stats.var_a[i] * stats.var_b[i] + epsilon);
  }
  return cc;
}

}  // namespace nmsr
