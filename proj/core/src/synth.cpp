#include "nmsr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "nmsr/error.hpp"
#include "nmsr/rng.hpp"
#include "nmsr/warp_field.hpp"

namespace nmsr {
namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::vector<double> gaussian_blur(const std::vector<double>& src, std::int64_t w, std::int64_t h,
                                  double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    norm += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= norm;
  auto clampi = [](std::int64_t i, std::int64_t n) { return std::clamp<std::int64_t>(i, 0, n - 1); };
  std::vector<double> tmp(src.size());
  std::vector<double> out(src.size());
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] * src[y * w + clampi(x + i, w)];
      }
      tmp[y * w + x] = acc;
    }
  }
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp[clampi(y + i, h) * w + x];
      }
      out[y * w + x] = acc;
    }
  }
  return out;
}

Image speckle_texture(std::int64_t w, std::int64_t h, std::int64_t feature_scale, double grain,
                      Rng& rng) {
  const auto n = static_cast<std::size_t>(w * h);
  std::vector<double> noise(n);
  for (auto& v : noise) v = rng.exponential();
  auto speckle = gaussian_blur(noise, w, h, grain / 2.0);
  double mean = 0.0;
  for (double v : speckle) mean += v;
  mean /= static_cast<double>(n);

  const auto blobs = std::max<std::int64_t>(4, (w * h) / 800);
  std::vector<double> tissue(n, 0.3);
  const double fs = static_cast<double>(feature_scale);
  for (std::int64_t k = 0; k < blobs; ++k) {
    const double cx = rng.uniform(0.0, static_cast<double>(w));
    const double cy = rng.uniform(0.0, static_cast<double>(h));
    const double s = rng.uniform(fs / 20.0, fs / 8.0);
    const double a = rng.uniform(0.4, 1.0);
    const auto reach = static_cast<std::int64_t>(std::ceil(4.0 * s));
    const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cx) - reach);
    const auto x1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(cx) + reach);
    const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cy) - reach);
    const auto y1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(cy) + reach);
    for (auto y = y0; y <= y1; ++y) {
      for (auto x = x0; x <= x1; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        tissue[y * w + x] += a * std::exp(-(dx * dx + dy * dy) / (2.0 * s * s));
      }
    }
  }
  std::vector<double> raw(n);
  for (std::size_t i = 0; i < n; ++i) raw[i] = tissue[i] * speckle[i] / mean;
  std::vector<double> sorted = raw;
  const auto k = static_cast<std::size_t>(0.99 * static_cast<double>(n - 1));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  const double scale = sorted[k] > 0.0 ? 0.9 / sorted[k] : 1.0;
  for (auto& v : raw) v = std::clamp(v * scale, 0.0, 1.0);
  return Image(w, h, std::move(raw));
}

}  // namespace

std::string to_string(FlowKind kind) {
  switch (kind) {
    case FlowKind::translation: return "translation";
    case FlowKind::rotation: return "rotation";
    case FlowKind::lamb_oseen_vortex: return "vortex";
    case FlowKind::radial_contraction: return "contraction";
  }
  return "unknown";
}

FlowKind parse_flow_kind(const std::string& text) {
  if (text == "translation") return FlowKind::translation;
  if (text == "rotation") return FlowKind::rotation;
  if (text == "vortex" || text == "lamb_oseen_vortex") return FlowKind::lamb_oseen_vortex;
  if (text == "contraction" || text == "radial_contraction") return FlowKind::radial_contraction;
  throw ConfigError("unknown flow kind '" + text + "'");
}

void FlowSpec::validate() const {
  if (frames < 2) throw ConfigError("synthetic sequence needs at least two frames");
  if (width < 8 || height < 8) throw ConfigError("synthetic frames must be at least 8x8");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise sigma must be non-negative");
  if (!(grain > 0.0)) throw ConfigError("speckle grain must be positive");
  if (kind == FlowKind::lamb_oseen_vortex && !(core_radius > 0.0)) {
    throw ConfigError("vortex core radius must be positive");
  }
  for (double p : {u, v, omega, circulation, core_radius, rate}) {
    if (!std::isfinite(p)) throw ConfigError("flow parameters must be finite");
  }
}

double lamb_oseen_speed(double circulation, double core_radius, double r) {
  if (r <= 0.0) return 0.0;
  return circulation / (2.0 * std::numbers::pi * r) *
         (1.0 - std::exp(-(r * r) / (core_radius * core_radius)));
}

double lamb_oseen_circulation_for_peak(double max_speed, double core_radius) {
  // Peak of (1 - exp(-x^2)) / x over x = r / rc, by golden-section search.
  auto g = [](double x) { return (1.0 - std::exp(-x * x)) / x; };
  double lo = 0.5;
  double hi = 2.0;
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int i = 0; i < 200; ++i) {
    const double a = hi - phi * (hi - lo);
    const double b = lo + phi * (hi - lo);
    if (g(a) > g(b)) {
      hi = b;
    } else {
      lo = a;
    }
  }
  const double peak = g(0.5 * (lo + hi));
  return 2.0 * std::numbers::pi * core_radius * max_speed / peak;
}

std::array<double, 2> flow_at(const FlowSpec& spec, double x, double y) {
  const double cx = std::isnan(spec.center_x) ? 0.5 * static_cast<double>(spec.width - 1) : spec.center_x;
  const double cy = std::isnan(spec.center_y) ? 0.5 * static_cast<double>(spec.height - 1) : spec.center_y;
  const double rx = x - cx;
  const double ry = y - cy;
  switch (spec.kind) {
    case FlowKind::translation: return {spec.u, spec.v};
    case FlowKind::rotation: return {-spec.omega * ry, spec.omega * rx};
    case FlowKind::lamb_oseen_vortex: {
      const double r = std::hypot(rx, ry);
      if (r == 0.0) return {0.0, 0.0};
      const double s = lamb_oseen_speed(spec.circulation, spec.core_radius, r);
      return {-s * ry / r, s * rx / r};
    }
    case FlowKind::radial_contraction: return {spec.rate * rx, spec.rate * ry};
  }
  return {0.0, 0.0};
}

FlowField analytic_flow(const FlowSpec& spec) {
  FlowField f(spec.width, spec.height);
  for (std::int64_t y = 0; y < spec.height; ++y) {
    for (std::int64_t x = 0; x < spec.width; ++x) {
      const auto d = flow_at(spec, static_cast<double>(x), static_cast<double>(y));
      f.dx(x, y) = d[0];
      f.dy(x, y) = d[1];
    }
  }
  return f;
}

SyntheticSequence generate(const FlowSpec& spec) {
  spec.validate();
  const auto w = spec.width;
  const auto h = spec.height;
  const FlowField truth = analytic_flow(spec);
  const double max_disp = truth.max_magnitude();
  const double limit = static_cast<double>(std::min(w, h)) / 4.0;
  if (max_disp > limit) {
    throw ConfigError("per-pair displacement " + fmt(max_disp) + " px exceeds min(h,w)/4 = " +
                      fmt(limit) + " px");
  }

  // Texture lives on a canvas with a margin so content entering the field of
  // view is real texture rather than border smear.
  const auto margin = std::min<std::int64_t>(
      static_cast<std::int64_t>(std::ceil(max_disp * (spec.frames - 1))) + 2, 2 * std::max(w, h));
  const auto cw = w + 2 * margin;
  const auto ch = h + 2 * margin;
  Rng rng(spec.seed);
  Image clean = speckle_texture(cw, ch, std::min(w, h), spec.grain, rng);

  FlowField canvas_flow(cw, ch);
  for (std::int64_t y = 0; y < ch; ++y) {
    for (std::int64_t x = 0; x < cw; ++x) {
      const auto d = flow_at(spec, static_cast<double>(x - margin), static_cast<double>(y - margin));
      canvas_flow.dx(x, y) = d[0];
      canvas_flow.dy(x, y) = d[1];
    }
  }

  SyntheticSequence out;
  out.max_displacement = max_disp;
  const auto erode = static_cast<std::int64_t>(std::ceil(max_disp)) + 1;
  out.mask = Mask(w, h, false);
  for (std::int64_t y = erode; y < h - erode; ++y) {
    for (std::int64_t x = erode; x < w - erode; ++x) out.mask.set(x, y, true);
  }
  out.sequence.id = to_string(spec.kind) + "_seed" + std::to_string(spec.seed);
  for (int t = 0; t < spec.frames; ++t) {
    if (t > 0) clean = warp(clean, canvas_flow);
    Image frame(w, h);
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        double v = clean.at(x + margin, y + margin);
        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
        frame.at(x, y) = std::clamp(v, 0.0, 1.0);
      }
    }
    out.sequence.frames.push_back(std::move(frame));
    out.sequence.masks.push_back(out.mask);
  }
  out.truth.assign(static_cast<std::size_t>(spec.frames - 1), truth);

  const double cx = std::isnan(spec.center_x) ? 0.5 * static_cast<double>(w - 1) : spec.center_x;
  const double cy = std::isnan(spec.center_y) ? 0.5 * static_cast<double>(h - 1) : spec.center_y;
  out.metadata = {
      {"sequence_id", out.sequence.id},
      {"kind", to_string(spec.kind)},
      {"frames", std::to_string(spec.frames)},
      {"width", std::to_string(w)},
      {"height", std::to_string(h)},
      {"u", fmt(spec.u)},
      {"v", fmt(spec.v)},
      {"center_x", fmt(cx)},
      {"center_y", fmt(cy)},
      {"omega", fmt(spec.omega)},
      {"circulation", fmt(spec.circulation)},
      {"core_radius", fmt(spec.core_radius)},
      {"rate", fmt(spec.rate)},
      {"noise_sigma", fmt(spec.noise_sigma)},
      {"grain", fmt(spec.grain)},
      {"seed", std::to_string(spec.seed)},
      {"max_displacement", fmt(max_disp)},
      {"mask_erosion", std::to_string(erode)},
  };
  return out;
}

EpeResult epe_oracle(const FlowField& pred, const FlowField& truth, const Mask& mask) {
  if (pred.width() != truth.width() || pred.height() != truth.height() ||
      mask.width() != pred.width() || mask.height() != pred.height()) {
    throw InvalidShape("epe_oracle: dimension mismatch");
  }
  double epe = 0.0;
  double ang = 0.0;
  std::int64_t count = 0;
  for (std::int64_t y = 0; y < pred.height(); ++y) {
    for (std::int64_t x = 0; x < pred.width(); ++x) {
      if (!mask.at(x, y)) continue;
      const double u = pred.dx(x, y);
      const double v = pred.dy(x, y);
      const double ut = truth.dx(x, y);
      const double vt = truth.dy(x, y);
      epe += std::hypot(u - ut, v - vt);
      // Angle between (u,v,1) and (ut,vt,1) via atan2(|a x b|, a.b).
      const double cross = std::sqrt((v - vt) * (v - vt) + (ut - u) * (ut - u) +
                                     (u * vt - v * ut) * (u * vt - v * ut));
      const double dot = u * ut + v * vt + 1.0;
      ang += std::atan2(cross, dot) * 180.0 / std::numbers::pi;
      ++count;
    }
  }
  if (count == 0) throw ContractError("epe_oracle: mask is empty");
  return {epe / static_cast<double>(count), ang / static_cast<double>(count)};
}

}  // namespace nmsr
