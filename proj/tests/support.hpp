#pragma once

// Reference implementations written directly from the definitions, kept
// deliberately naive so they share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nmsr/image.hpp"
#include "nmsr/tensor.hpp"

namespace testing {

inline std::vector<double> random_vector(std::mt19937_64& gen, std::size_t n, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

inline nmsr::Tensor random_tensor(std::mt19937_64& gen, nmsr::Shape shape, double lo = -1.0,
                                  double hi = 1.0) {
  const auto n = static_cast<std::size_t>(nmsr::shape_numel(shape));
  return nmsr::Tensor(std::move(shape), random_vector(gen, n, lo, hi));
}

inline nmsr::Image random_image(std::mt19937_64& gen, std::int64_t w, std::int64_t h) {
  return nmsr::Image(w, h, random_vector(gen, static_cast<std::size_t>(w * h), 0.0, 1.0));
}

/// Smooth, non-degenerate test pattern.
inline nmsr::Image blob_image(std::int64_t w, std::int64_t h, double phase = 0.0) {
  nmsr::Image img(w, h);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const double gx = (x - 0.4 * w) / (0.25 * w);
      const double gy = (y - 0.6 * h) / (0.3 * h);
      img.at(x, y) = 0.2 + 0.5 * std::exp(-(gx * gx + gy * gy)) +
                     0.2 * std::sin(0.3 * x + phase) * std::cos(0.25 * y);
    }
  }
  return img;
}

/// Central differences of a scalar function of t's values.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, nmsr::Tensor& t,
                                            double step = 1e-5) {
  auto values = t.data();
  std::vector<double> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double plus = f();
    values[i] = saved - step;
    const double minus = f();
    values[i] = saved;
    grad[i] = (plus - minus) / (2.0 * step);
  }
  return grad;
}

/// ||a - b|| / max(||a||, ||b||).
inline double relative_error(const std::vector<double>& a, std::span<const double> b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(d) / denom;
}

/// Direct 7-loop convolution.
inline std::vector<double> naive_conv2d(const nmsr::Tensor& in, const nmsr::Tensor& k,
                                        const nmsr::Tensor& b, int stride, int pad) {
  const auto n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  const auto kk = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const auto ho = (h + 2 * pad - kh) / stride + 1;
  const auto wo = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(n * kk * ho * wo));
  auto x = in.data();
  auto wt = k.data();
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t o = 0; o < kk; ++o)
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          double acc = b.data()[o];
          for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t ky = 0; ky < kh; ++ky)
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const auto iy = oy * stride - pad + ky;
                const auto ix = ox * stride - pad + kx;
                if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
                acc += x[((ni * c + ci) * h + iy) * w + ix] * wt[((o * c + ci) * kh + ky) * kw + kx];
              }
          out[((ni * kk + o) * ho + oy) * wo + ox] = acc;
        }
  return out;
}

/// Per-pixel windowed squared NCC, window truncated at the border.
inline std::vector<double> naive_local_ncc2(const std::vector<double>& a,
                                            const std::vector<double>& b, std::int64_t h,
                                            std::int64_t w, int r, double eps) {
  std::vector<double> out(static_cast<std::size_t>(h * w));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      std::vector<double> wa, wb;
      for (std::int64_t yy = y - r; yy <= y + r; ++yy)
        for (std::int64_t xx = x - r; xx <= x + r; ++xx)
          if (yy >= 0 && xx >= 0 && yy < h && xx < w) {
            wa.push_back(a[yy * w + xx]);
            wb.push_back(b[yy * w + xx]);
          }
      double ma = 0, mb = 0;
      for (std::size_t i = 0; i < wa.size(); ++i) {
        ma += wa[i];
        mb += wb[i];
      }
      ma /= wa.size();
      mb /= wb.size();
      double sab = 0, saa = 0, sbb = 0;
      for (std::size_t i = 0; i < wa.size(); ++i) {
        sab += (wa[i] - ma) * (wb[i] - mb);
        saa += (wa[i] - ma) * (wa[i] - ma);
        sbb += (wb[i] - mb) * (wb[i] - mb);
      }
      out[y * w + x] = sab * sab / (saa * sbb + eps);
    }
  }
  return out;
}

/// Brute-force smoothness: mean of squared x-differences over both
/// components plus the same for y.
inline double naive_smoothness(const nmsr::FlowField& f) {
  double sx = 0, sy = 0;
  std::int64_t nx = 0, ny = 0;
  for (std::int64_t y = 0; y < f.height(); ++y)
    for (std::int64_t x = 0; x < f.width(); ++x) {
      if (x + 1 < f.width()) {
        sx += std::pow(f.dx(x + 1, y) - f.dx(x, y), 2) + std::pow(f.dy(x + 1, y) - f.dy(x, y), 2);
        nx += 2;
      }
      if (y + 1 < f.height()) {
        sy += std::pow(f.dx(x, y + 1) - f.dx(x, y), 2) + std::pow(f.dy(x, y + 1) - f.dy(x, y), 2);
        ny += 2;
      }
    }
  return (nx ? sx / nx : 0.0) + (ny ? sy / ny : 0.0);
}

/// Fresh, empty scratch directory under the build tree's temp area.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("nmsr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing
