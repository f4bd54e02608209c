#include "nmsr/losses.hpp"

#include "nmsr/error.hpp"
#include "nmsr/window_stats.hpp"

namespace nmsr {
namespace {

void require_single_plane(const Tensor& t, const char* what) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 1) {
    throw InvalidShape(std::string("ncc_loss: ") + what + " must be [1,1,H,W], got " +
                       shape_str(t.shape()));
  }
}

}  // namespace

void LossConfig::validate() const {
  if (ncc_radius < 1) throw ConfigError("ncc radius must be >= 1");
  if (!(epsilon > 0.0)) throw ConfigError("ncc epsilon must be > 0");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
}

Tensor ncc_loss(Graph& g, const Tensor& moving, const Tensor& fixed, const LossConfig& cfg) {
  cfg.validate();
  require_single_plane(moving, "moving");
  require_single_plane(fixed, "fixed");
  if (moving.shape() != fixed.shape()) {
    throw InvalidShape("ncc_loss: moving " + shape_str(moving.shape()) + " vs fixed " +
                       shape_str(fixed.shape()));
  }
  const auto h = moving.dim(2);
  const auto w = moving.dim(3);
  if (cfg.region_mask && (cfg.region_mask->width() != w || cfg.region_mask->height() != h)) {
    throw InvalidShape("ncc_loss: region mask dimensions differ from images");
  }
  const auto n = static_cast<std::size_t>(h * w);
  auto stats = std::make_shared<WindowStats>(
      window_stats(moving.data(), fixed.data(), h, w, cfg.ncc_radius));
  const auto cc = local_ncc_squared(*stats, cfg.epsilon);
  std::vector<std::uint8_t> inside(n, 1);
  if (cfg.region_mask) {
    for (std::size_t i = 0; i < n; ++i) inside[i] = cfg.region_mask->contains(i) ? 1 : 0;
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (inside[i]) acc += cc[i];
  }

  Tensor out({1}, -acc);
  out.set_requires_grad(moving.requires_grad() || fixed.requires_grad());
  const int radius = cfg.ncc_radius;
  const double eps = cfg.epsilon;
  g.record("ncc_loss", {moving, fixed}, out,
           [moving, fixed, out, stats, inside = std::move(inside), h, w, radius, eps]() mutable {
             const auto n = static_cast<std::size_t>(h * w);
             const double go = out.grad()[0];
             // For a centre p: d cc_p / d M(q) = A_p (I(q) - mean_I,p) - B_p (M(q) - mean_M,p),
             // and symmetrically for I with C_p in place of B_p.
             std::vector<double> a(n, 0.0), a_mi(n, 0.0), a_mm(n, 0.0);
             std::vector<double> b(n, 0.0), b_mm(n, 0.0), c(n, 0.0), c_mi(n, 0.0);
             for (std::size_t p = 0; p < n; ++p) {
               if (!inside[p]) continue;
               const double cross = stats->cross[p];
               const double denom = stats->var_a[p] * stats->var_b[p] + eps;
               const double ap = 2.0 * cross / denom;
               const double sq = cross * cross / (denom * denom);
               a[p] = ap;
               a_mi[p] = ap * stats->mean_b[p];
               a_mm[p] = ap * stats->mean_a[p];
               b[p] = 2.0 * sq * stats->var_b[p];
               b_mm[p] = b[p] * stats->mean_a[p];
               c[p] = 2.0 * sq * stats->var_a[p];
               c_mi[p] = c[p] * stats->mean_b[p];
             }
             const auto m = moving.data();
             const auto f = fixed.data();
             if (moving.requires_grad()) {
               const auto sa = box_sum(a, h, w, radius);
               const auto sa_mi = box_sum(a_mi, h, w, radius);
               const auto sb = box_sum(b, h, w, radius);
               const auto sb_mm = box_sum(b_mm, h, w, radius);
               auto dm = moving.grad_mut();
               for (std::size_t q = 0; q < n; ++q) {
                 const double dcc = f[q] * sa[q] - sa_mi[q] - m[q] * sb[q] + sb_mm[q];
                 dm[q] += -go * dcc;
               }
             }
             if (fixed.requires_grad()) {
               const auto sa = box_sum(a, h, w, radius);
               const auto sa_mm = box_sum(a_mm, h, w, radius);
               const auto sc = box_sum(c, h, w, radius);
               const auto sc_mi = box_sum(c_mi, h, w, radius);
               auto df = fixed.grad_mut();
               for (std::size_t q = 0; q < n; ++q) {
                 const double dcc = m[q] * sa[q] - sa_mm[q] - f[q] * sc[q] + sc_mi[q];
                 df[q] += -go * dcc;
               }
             }
           });
  return out;
}

Tensor smoothness_loss(Graph& g, const Tensor& flow) {
  if (flow.rank() != 4 || flow.dim(0) != 1 || flow.dim(1) != 2) {
    throw InvalidShape("smoothness_loss: flow must be [1,2,H,W], got " + shape_str(flow.shape()));
  }
  const auto h = flow.dim(2);
  const auto w = flow.dim(3);
  const double nx = static_cast<double>(2 * h * (w - 1));
  const double ny = static_cast<double>(2 * (h - 1) * w);
  const auto v = flow.data();
  double sx = 0.0;
  double sy = 0.0;
  for (std::int64_t c = 0; c < 2; ++c) {
    const double* f = v.data() + c * h * w;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        if (x + 1 < w) {
          const double d = f[y * w + x + 1] - f[y * w + x];
          sx += d * d;
        }
        if (y + 1 < h) {
          const double d = f[(y + 1) * w + x] - f[y * w + x];
          sy += d * d;
        }
      }
    }
  }
  const double value = (nx > 0 ? sx / nx : 0.0) + (ny > 0 ? sy / ny : 0.0);
  Tensor out({1}, value);
  out.set_requires_grad(flow.requires_grad());
  g.record("smoothness_loss", {flow}, out, [flow, out, h, w, nx, ny]() mutable {
    const double go = out.grad()[0];
    const auto v = flow.data();
    auto d = flow.grad_mut();
    const double kx = nx > 0 ? 2.0 * go / nx : 0.0;
    const double ky = ny > 0 ? 2.0 * go / ny : 0.0;
    for (std::int64_t c = 0; c < 2; ++c) {
      const auto base = c * h * w;
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
          const auto i = base + y * w + x;
          if (x + 1 < w) {
            const double diff = v[i + 1] - v[i];
            d[i + 1] += kx * diff;
            d[i] -= kx * diff;
          }
          if (y + 1 < h) {
            const double diff = v[i + w] - v[i];
            d[i + w] += ky * diff;
            d[i] -= ky * diff;
          }
        }
      }
    }
  });
  return out;
}

LossTerms total_loss(Graph& g, const Tensor& moving_warped, const Tensor& fixed,
                     const Tensor& flow, const LossConfig& cfg) {
  LossTerms terms;
  terms.ncc = ncc_loss(g, moving_warped, fixed, cfg);
  terms.smooth = smoothness_loss(g, flow);
  if (cfg.lambda == 0.0) {
    terms.total = terms.ncc;
  } else {
    terms.total = ops::add(g, terms.ncc, ops::scale(g, terms.smooth, cfg.lambda));
  }
  return terms;
}

}  // namespace nmsr
