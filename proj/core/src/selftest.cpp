#include "nmsr/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#include "nmsr/gradcheck.hpp"
#include "nmsr/losses.hpp"
#include "nmsr/metrics.hpp"
#include "nmsr/rng.hpp"
#include "nmsr/unet.hpp"
#include "nmsr/warp_field.hpp"

namespace nmsr {
namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kOracleTolerance = 1e-10;

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Keeps the fault hook scoped to one suite even when a check throws.
class FaultScope {
 public:
  explicit FaultScope(bool on) : on_(on) {
    if (on_) fault_injection::set("conv2d");
  }
  ~FaultScope() {
    if (on_) fault_injection::clear();
  }
  FaultScope(const FaultScope&) = delete;
  FaultScope& operator=(const FaultScope&) = delete;

 private:
  bool on_;
};

std::vector<double> random_values(Rng& rng, std::int64_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Values bounded away from zero, so a finite-difference step never crosses
// the leaky ReLU kink.
std::vector<double> off_kink_values(Rng& rng, std::int64_t n) {
  auto v = random_values(rng, n, 0.05, 1.0);
  for (auto& x : v) x = rng.uniform() < 0.5 ? -x : x;
  return v;
}

Tensor random_tensor(Rng& rng, Shape shape) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), random_values(rng, n));
}

// Contracting an op's output with fixed random weights gives a scalar whose
// gradient exercises every output element differently.
Tensor weighted_sum(Graph& g, const Tensor& x, const Tensor& weights) {
  return ops::sum(g, ops::mul(g, x, weights));
}

Image smooth_image(std::int64_t w, std::int64_t h, double phase) {
  Image img(w, h);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      img.at(x, y) = 0.5 + 0.25 * std::sin(0.21 * x + phase) * std::cos(0.17 * y - phase) +
                     0.1 * std::sin(0.05 * (x + y));
    }
  }
  return img;
}

struct Recorder {
  SelftestReport report;
  std::string suite;

  void add(std::string name, double value, double tolerance) {
    const bool ok = std::isfinite(value) && (tolerance > 0.0 ? value < tolerance : value <= 0.0);
    report.checks.push_back({suite, std::move(name), value, tolerance, ok});
  }

  void gradient(std::string name, const LossBuilder& build, std::vector<Tensor> inputs) {
    add(std::move(name), gradcheck(build, inputs).max_relative_error, kGradTolerance);
  }

  // Runs `body`, turning an unexpected exception into a named failure.
  void guarded(const std::string& name, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      report.checks.push_back({suite, name + " (threw: " + e.what() + ")", 0.0, 0.0, false});
    }
  }
};

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double field_diff(const FlowField& a, const FlowField& b) {
  return std::max(max_abs_diff(a.dx_plane(), b.dx_plane()),
                  max_abs_diff(a.dy_plane(), b.dy_plane()));
}

double brute_force_mean_cc(const Image& a, const Image& b, const Mask& mask, int radius,
                           double eps) {
  const auto w = a.width();
  const auto h = a.height();
  double acc = 0.0;
  std::int64_t n = 0;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      if (!mask.at(x, y)) continue;
      double sa = 0, sb = 0, cnt = 0;
      for (auto yy = std::max<std::int64_t>(0, y - radius); yy <= std::min(h - 1, y + radius); ++yy) {
        for (auto xx = std::max<std::int64_t>(0, x - radius); xx <= std::min(w - 1, x + radius);
             ++xx) {
          sa += a.at(xx, yy);
          sb += b.at(xx, yy);
          cnt += 1;
        }
      }
      const double ma = sa / cnt, mb = sb / cnt;
      double va = 0, vb = 0, c = 0;
      for (auto yy = std::max<std::int64_t>(0, y - radius); yy <= std::min(h - 1, y + radius); ++yy) {
        for (auto xx = std::max<std::int64_t>(0, x - radius); xx <= std::min(w - 1, x + radius);
             ++xx) {
          const double da = a.at(xx, yy) - ma, db = b.at(xx, yy) - mb;
          va += da * da;
          vb += db * db;
          c += da * db;
        }
      }
      acc += c * c / (va * vb + eps);
      ++n;
    }
  }
  return acc / static_cast<double>(n);
}

}  // namespace

double brute_force_ncc_loss(const std::vector<double>& moving, const std::vector<double>& fixed,
                            std::int64_t height, std::int64_t width, int radius, double epsilon,
                            const std::vector<unsigned char>& mask) {
  const Image m(width, height, moving);
  const Image f(width, height, fixed);
  Mask region(width, height, true);
  if (!mask.empty()) {
    for (std::int64_t i = 0; i < width * height; ++i) {
      region.set(i % width, i / width, mask[static_cast<std::size_t>(i)] != 0);
    }
  }
  const auto count = region.count();
  if (count == 0) return 0.0;
  return -brute_force_mean_cc(m, f, region, radius, epsilon) * static_cast<double>(count);
}

bool SelftestReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

std::vector<SelftestCheck> SelftestReport::failures() const {
  std::vector<SelftestCheck> out;
  for (const auto& c : checks) {
    if (!c.passed) out.push_back(c);
  }
  return out;
}

std::string SelftestReport::to_text() const {
  std::string out;
  char line[256];
  for (const auto& c : checks) {
    std::snprintf(line, sizeof line, "%-4s  %-14s %-40s err=%.3e tol=%.1e\n",
                  c.passed ? "ok" : "FAIL", c.suite.c_str(), c.name.c_str(), c.value, c.tolerance);
    out += line;
  }
  const auto failed = failures();
  std::snprintf(line, sizeof line, "%zu checks, %zu failed, %.2f s\n", checks.size(), failed.size(),
                seconds);
  out += line;
  for (const auto& c : failed) out += "failed: " + c.suite + "/" + c.name + "\n";
  return out;
}

SelftestReport gradient_suite(const SelftestOptions& options) {
  const Timer timer;
  const FaultScope fault(options.corrupt_conv_backward);
  Recorder rec{{}, "gradient"};
  Rng rng(options.seed);

  for (const int stride : {1, 2}) {
    const std::string name = "conv2d stride " + std::to_string(stride);
    rec.guarded(name, [&] {
      Tensor x = random_tensor(rng, {2, 3, 9, 8});
      Tensor k = random_tensor(rng, {4, 3, 3, 3});
      Tensor b = random_tensor(rng, {4});
      const auto oh = (9 + 2 - 3) / stride + 1;
      const auto ow = (8 + 2 - 3) / stride + 1;
      Tensor wts = random_tensor(rng, {2, 4, oh, ow});
      rec.gradient(name, [&](Graph& g) {
        return weighted_sum(g, ops::conv2d(g, x, k, b, stride, 1), wts);
      }, {x, k, b});
    });
  }

  rec.guarded("leaky_relu", [&] {
    Tensor x({2, 3, 5, 5}, off_kink_values(rng, 150));
    Tensor wts = random_tensor(rng, {2, 3, 5, 5});
    rec.gradient("leaky_relu", [&](Graph& g) {
      return weighted_sum(g, ops::leaky_relu(g, x, kLeakySlope), wts);
    }, {x});
  });

  rec.guarded("upsample2x", [&] {
    Tensor x = random_tensor(rng, {1, 3, 4, 5});
    Tensor wts = random_tensor(rng, {1, 3, 8, 10});
    rec.gradient("upsample2x", [&](Graph& g) {
      return weighted_sum(g, ops::upsample2x(g, x), wts);
    }, {x});
  });

  rec.guarded("concat/slice channels", [&] {
    Tensor a = random_tensor(rng, {1, 2, 4, 4});
    Tensor b = random_tensor(rng, {1, 3, 4, 4});
    Tensor wts = random_tensor(rng, {1, 3, 4, 4});
    rec.gradient("concat/slice channels", [&](Graph& g) {
      return weighted_sum(g, ops::slice_channels(g, ops::concat_channels(g, a, b), 1, 4), wts);
    }, {a, b});
  });

  rec.guarded("add/mul/scale/sum", [&] {
    Tensor a = random_tensor(rng, {1, 2, 3, 3});
    Tensor b = random_tensor(rng, {1, 2, 3, 3});
    rec.gradient("add/mul/scale/sum", [&](Graph& g) {
      return ops::sum(g, ops::scale(g, ops::mul(g, ops::add(g, a, b), a), -1.7));
    }, {a, b});
  });

  rec.guarded("grid_sample_bilinear", [&] {
    const std::int64_t h = 12, w = 11;
    Tensor img({1, 1, h, w}, random_values(rng, h * w, 0.0, 1.0));
    // Fractional parts in [0.2, 0.8] keep every tap away from cell edges, and
    // magnitudes stay inside the border.
    std::vector<double> f(static_cast<std::size_t>(2 * h * w));
    for (auto& v : f) v = (rng.uniform() < 0.5 ? -1.0 : 0.0) + rng.uniform(0.2, 0.8);
    Tensor flow({1, 2, h, w}, std::move(f));
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        if (x == 0 || y == 0 || x == w - 1 || y == h - 1) {
          flow.data()[y * w + x] = 0.5;
          flow.data()[h * w + y * w + x] = 0.5;
          if (x == w - 1) flow.data()[y * w + x] = -0.5;
          if (y == h - 1) flow.data()[h * w + y * w + x] = -0.5;
        }
      }
    }
    Tensor wts = random_tensor(rng, {1, 1, h, w});
    rec.gradient("grid_sample_bilinear", [&](Graph& g) {
      return weighted_sum(g, ops::grid_sample_bilinear(g, img, flow), wts);
    }, {img, flow});
  });

  rec.guarded("ncc_loss", [&] {
    const std::int64_t h = 14, w = 13;
    Tensor m({1, 1, h, w}, random_values(rng, h * w, 0.0, 1.0));
    Tensor f({1, 1, h, w}, random_values(rng, h * w, 0.0, 1.0));
    LossConfig cfg;
    cfg.ncc_radius = 2;
    Mask mask(w, h, true);
    for (std::int64_t x = 0; x < w; ++x) mask.set(x, 0, false);
    cfg.region_mask = mask;
    rec.gradient("ncc_loss", [&](Graph& g) { return ncc_loss(g, m, f, cfg); }, {m, f});
  });

  rec.guarded("smoothness_loss", [&] {
    Tensor flow = random_tensor(rng, {1, 2, 7, 9});
    rec.gradient("smoothness_loss", [&](Graph& g) { return smoothness_loss(g, flow); }, {flow});
  });

  rec.guarded("unet+loss composite", [&] {
    const std::int64_t n = 16;
    ArchDescriptor arch{{4, 4}, {4, 4}};
    ModelParams params = init_params(arch, rng.next());
    // A non-trivial head keeps the predicted flow away from integer sample
    // positions so central differences see a smooth loss.
    auto& head = params.layers.back();
    for (auto& v : head.kernel.data()) v = rng.uniform(-0.02, 0.02);
    head.bias.data()[0] = 0.3;
    head.bias.data()[1] = -0.4;
    const Image mi = smooth_image(n, n, 0.3);
    const Image fi = smooth_image(n, n, 0.9);
    Tensor moving = to_tensor(mi);
    Tensor fixed = to_tensor(fi);
    LossConfig cfg;
    cfg.ncc_radius = 2;
    cfg.lambda = 10.0;
    auto inputs = params.tensors();
    inputs.push_back(moving);
    rec.gradient("unet+loss composite", [&](Graph& g) {
      const Tensor flow = unet_forward(g, params, moving, fixed);
      return total_loss(g, ops::grid_sample_bilinear(g, moving, flow), fixed, flow, cfg).total;
    }, inputs);
  });

  rec.report.seconds = timer.seconds();
  return rec.report;
}

SelftestReport oracle_suite(const SelftestOptions& options) {
  const Timer timer;
  Recorder rec{{}, "oracle"};
  Rng rng(options.seed + 1);
  const std::int64_t n = 32;
  double loss_err = 0.0, masked_err = 0.0, cc_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_values(rng, n * n, 0.0, 1.0);
    auto b = random_values(rng, n * n, 0.0, 1.0);
    // Half the pairs are correlated so both small and large NCC values occur.
    if (trial % 2 == 1) {
      for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.7 * a[i] + 0.3 * b[i];
    }
    std::vector<unsigned char> bits(static_cast<std::size_t>(n * n));
    Mask mask(n, n, false);
    for (std::int64_t i = 0; i < n * n; ++i) {
      const bool on = rng.uniform() < 0.6;
      bits[static_cast<std::size_t>(i)] = on ? 1 : 0;
      mask.set(i % n, i / n, on);
    }
    LossConfig cfg;
    Graph g;
    const double fast = ncc_loss(g, Tensor({1, 1, n, n}, a), Tensor({1, 1, n, n}, b), cfg).item();
    loss_err = std::max(loss_err, std::abs(fast - brute_force_ncc_loss(a, b, n, n, cfg.ncc_radius,
                                                                      cfg.epsilon)));
    cfg.region_mask = mask;
    const double fast_masked =
        ncc_loss(g, Tensor({1, 1, n, n}, a), Tensor({1, 1, n, n}, b), cfg).item();
    masked_err = std::max(masked_err,
                          std::abs(fast_masked - brute_force_ncc_loss(a, b, n, n, cfg.ncc_radius,
                                                                      cfg.epsilon, bits)));
    const Image ia(n, n, a), ib(n, n, b);
    cc_err = std::max(cc_err, std::abs(mean_cc(ia, ib, mask) -
                                       brute_force_mean_cc(ia, ib, mask, kMeanCcRadius,
                                                           kMeanCcEpsilon)));
  }
  rec.add("ncc loss vs brute force", loss_err, kOracleTolerance);
  rec.add("masked ncc loss vs brute force", masked_err, kOracleTolerance);
  rec.add("mean cc vs brute force", cc_err, kOracleTolerance);
  rec.report.seconds = timer.seconds();
  return rec.report;
}

SelftestReport field_algebra_suite(const SelftestOptions& options) {
  const Timer timer;
  Recorder rec{{}, "field_algebra"};
  Rng rng(options.seed + 2);
  const std::int64_t w = 32, h = 24;

  const FlowField zero(w, h);
  FlowField random(w, h);
  for (auto& v : random.dx_plane()) v = rng.uniform(-2.0, 2.0);
  for (auto& v : random.dy_plane()) v = rng.uniform(-2.0, 2.0);
  const Image img = smooth_image(w, h, 0.4);

  rec.add("warp by zero field is identity", max_abs_diff(warp(img, zero).pixels(), img.pixels()),
          0.0);
  rec.add("compose(0, 0) = 0", field_diff(compose(zero, zero), zero), 0.0);
  rec.add("compose(0, F) = F", field_diff(compose(zero, random), random), 0.0);
  rec.add("compose(F, 0) = F", field_diff(compose(random, zero), random), 0.0);
  rec.add("compose(a, b) = a + b for constants",
          field_diff(compose(FlowField(w, h, 1.25, -0.5), FlowField(w, h, -3.5, 2.75)),
                     FlowField(w, h, -2.25, 2.25)),
          1e-12);

  const FlowField coarse_zero(w / 4, h / 4);
  rec.add("promote(0) = 0", field_diff(promote_field(coarse_zero, w, h), zero), 0.0);
  rec.add("promote(c) = factor * c",
          field_diff(promote_field(FlowField(w / 4, h / 4, 0.75, -1.5), w, h),
                     FlowField(w, h, 3.0, -6.0)),
          1e-12);

  // An affine coarse field a + B x_c maps to the fine field f(a + B x_c) with
  // x_c = (x + 0.5)/f - 0.5, wherever x_c lies inside the coarse lattice.
  {
    const int f = 4;
    const auto cw = w / f, ch = h / f;
    auto affine = [](double x, double y) {
      return std::array<double, 2>{0.3 + 0.05 * x - 0.02 * y, -0.2 + 0.01 * x + 0.04 * y};
    };
    FlowField coarse(cw, ch);
    for (std::int64_t y = 0; y < ch; ++y) {
      for (std::int64_t x = 0; x < cw; ++x) {
        const auto v = affine(static_cast<double>(x), static_cast<double>(y));
        coarse.dx(x, y) = v[0];
        coarse.dy(x, y) = v[1];
      }
    }
    const auto fine = promote_field(coarse, w, h);
    double err = 0.0;
    for (std::int64_t y = 0; y < h; ++y) {
      const double yc = (y + 0.5) / f - 0.5;
      if (yc < 0.0 || yc > static_cast<double>(ch - 1)) continue;
      for (std::int64_t x = 0; x < w; ++x) {
        const double xc = (x + 0.5) / f - 0.5;
        if (xc < 0.0 || xc > static_cast<double>(cw - 1)) continue;
        const auto v = affine(xc, yc);
        err = std::max({err, std::abs(fine.dx(x, y) - f * v[0]), std::abs(fine.dy(x, y) - f * v[1])});
      }
    }
    rec.add("promote(affine) exact on interior", err, 1e-12);
  }

  // Two-stage warp vs composed warp on a smooth image and smooth fields.
  {
    const std::int64_t n = 48;
    const Image smooth = smooth_image(n, n, 1.1);
    FlowField first(n, n), second(n, n);
    for (std::int64_t y = 0; y < n; ++y) {
      for (std::int64_t x = 0; x < n; ++x) {
        first.dx(x, y) = 1.5 * std::sin(0.1 * y);
        first.dy(x, y) = -0.8 + 0.5 * std::cos(0.12 * x);
        second.dx(x, y) = 0.7 * std::cos(0.08 * (x + y));
        second.dy(x, y) = 1.2 * std::sin(0.09 * x);
      }
    }
    const Image two_stage = warp(warp(smooth, second), first);
    const Image composed = warp(smooth, compose(first, second));
    double mse_acc = 0.0;
    std::int64_t count = 0;
    const std::int64_t margin = 4;
    for (std::int64_t y = margin; y < n - margin; ++y) {
      for (std::int64_t x = margin; x < n - margin; ++x) {
        const double d = two_stage.at(x, y) - composed.at(x, y);
        mse_acc += d * d;
        ++count;
      }
    }
    rec.add("two-stage vs composed warp mse", mse_acc / static_cast<double>(count), 1e-4);
  }

  rec.report.seconds = timer.seconds();
  return rec.report;
}

SelftestReport run_selftest(const SelftestOptions& options) {
  const Timer timer;
  SelftestReport all;
  for (const auto& part :
       {gradient_suite(options), oracle_suite(options), field_algebra_suite(options)}) {
    all.checks.insert(all.checks.end(), part.checks.begin(), part.checks.end());
  }
  all.seconds = timer.seconds();
  return all;
}

}  // namespace nmsr
