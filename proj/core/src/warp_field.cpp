#include "nmsr/warp_field.hpp"

#include <cmath>
#include <cstdlib>

#include "nmsr/error.hpp"

namespace nmsr {
namespace {

void require_divisible(std::int64_t width, std::int64_t height, int factor, const char* what) {
  if (factor < 1) throw InvalidShape(std::string(what) + ": scale factor must be >= 1");
  if (width % factor != 0 || height % factor != 0) {
    throw InvalidShape(std::string(what) + ": " + std::to_string(width) + "x" +
                       std::to_string(height) + " is not divisible by " + std::to_string(factor));
  }
}

std::int64_t mirror(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

std::string Scale::str() const { return factor == 1 ? "1" : "1/" + std::to_string(factor); }

Scale parse_scale(std::string_view text) {
  const std::string s(text);
  double value = 0.0;
  try {
    if (const auto slash = s.find('/'); slash != std::string::npos) {
      std::size_t used_num = 0;
      std::size_t used_den = 0;
      const std::string num = s.substr(0, slash);
      const std::string den = s.substr(slash + 1);
      const double n = std::stod(num, &used_num);
      const double d = std::stod(den, &used_den);
      if (used_num != num.size() || used_den != den.size() || d == 0.0) throw ConfigError("");
      value = n / d;
    } else {
      std::size_t used = 0;
      value = std::stod(s, &used);
      if (used != s.size()) throw ConfigError("");
    }
  } catch (const std::exception&) {
    throw ConfigError("cannot parse scale '" + s + "'");
  }
  if (!(value > 0.0) || value > 1.0) throw ConfigError("scale must lie in (0,1]: '" + s + "'");
  const double inv = 1.0 / value;
  const auto factor = std::llround(inv);
  if (std::abs(inv - static_cast<double>(factor)) > 1e-9) {
    throw ConfigError("scale must be 1/k for an integer k: '" + s + "'");
  }
  return Scale{static_cast<int>(factor)};
}

Image downsample(const Image& img, Scale s) {
  require_divisible(img.width(), img.height(), s.factor, "downsample");
  if (s.factor == 1) return img;
  const int f = s.factor;
  Image out(img.width() / f, img.height() / f);
  const double inv_area = 1.0 / static_cast<double>(f * f);
  for (std::int64_t y = 0; y < out.height(); ++y) {
    for (std::int64_t x = 0; x < out.width(); ++x) {
      double acc = 0.0;
      for (int j = 0; j < f; ++j) {
        for (int i = 0; i < f; ++i) acc += img.at(x * f + i, y * f + j);
      }
      out.at(x, y) = acc * inv_area;
    }
  }
  return out;
}

Mask downsample(const Mask& mask, Scale s) {
  require_divisible(mask.width(), mask.height(), s.factor, "downsample");
  if (s.factor == 1) return mask;
  const int f = s.factor;
  Mask out(mask.width() / f, mask.height() / f, false);
  for (std::int64_t y = 0; y < out.height(); ++y) {
    for (std::int64_t x = 0; x < out.width(); ++x) {
      int inside = 0;
      for (int j = 0; j < f; ++j) {
        for (int i = 0; i < f; ++i) inside += mask.at(x * f + i, y * f + j) ? 1 : 0;
      }
      out.set(x, y, 2 * inside >= f * f);
    }
  }
  return out;
}

Image warp(const Image& img, const FlowField& flow) {
  if (img.width() != flow.width() || img.height() != flow.height()) {
    throw InvalidShape("warp: image and flow dimensions differ");
  }
  Image out(img.width(), img.height());
  for (std::int64_t y = 0; y < img.height(); ++y) {
    for (std::int64_t x = 0; x < img.width(); ++x) {
      out.at(x, y) = sample_bilinear(img.pixels(), img.height(), img.width(),
                                     static_cast<double>(x) + flow.dx(x, y),
                                     static_cast<double>(y) + flow.dy(x, y));
    }
  }
  return out;
}

FlowField promote_field(const FlowField& coarse, std::int64_t width, std::int64_t height) {
  if (width % coarse.width() != 0 || height % coarse.height() != 0 ||
      width / coarse.width() != height / coarse.height()) {
    throw InvalidShape("promote_field: " + std::to_string(coarse.width()) + "x" +
                       std::to_string(coarse.height()) + " -> " + std::to_string(width) + "x" +
                       std::to_string(height) + " is not a uniform integer ratio");
  }
  const auto factor = width / coarse.width();
  if (factor == 1) return coarse;
  const double f = static_cast<double>(factor);
  FlowField out(width, height);
  for (std::int64_t y = 0; y < height; ++y) {
    const double yc = (static_cast<double>(y) + 0.5) / f - 0.5;
    for (std::int64_t x = 0; x < width; ++x) {
      const double xc = (static_cast<double>(x) + 0.5) / f - 0.5;
      out.dx(x, y) = f * sample_bilinear(coarse.dx_plane(), coarse.height(), coarse.width(), xc, yc);
      out.dy(x, y) = f * sample_bilinear(coarse.dy_plane(), coarse.height(), coarse.width(), xc, yc);
    }
  }
  return out;
}

FlowField compose(const FlowField& first, const FlowField& second) {
  if (first.width() != second.width() || first.height() != second.height()) {
    throw InvalidShape("compose: field dimensions differ");
  }
  const auto w = first.width();
  const auto h = first.height();
  FlowField out(w, h);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const double u = first.dx(x, y);
      const double v = first.dy(x, y);
      const double sx = static_cast<double>(x) + u;
      const double sy = static_cast<double>(y) + v;
      out.dx(x, y) = u + sample_bilinear(second.dx_plane(), h, w, sx, sy);
      out.dy(x, y) = v + sample_bilinear(second.dy_plane(), h, w, sx, sy);
    }
  }
  return out;
}

Image reflect_pad(const Image& img, std::int64_t width, std::int64_t height) {
  if (width < img.width() || height < img.height()) {
    throw InvalidShape("reflect_pad: target smaller than image");
  }
  if (width == img.width() && height == img.height()) return img;
  Image out(width, height);
  for (std::int64_t y = 0; y < height; ++y) {
    const auto sy = mirror(y, img.height());
    for (std::int64_t x = 0; x < width; ++x) out.at(x, y) = img.at(mirror(x, img.width()), sy);
  }
  return out;
}

Mask pad_mask(const Mask& mask, std::int64_t width, std::int64_t height) {
  if (width < mask.width() || height < mask.height()) {
    throw InvalidShape("pad_mask: target smaller than mask");
  }
  Mask out(width, height, false);
  for (std::int64_t y = 0; y < mask.height(); ++y) {
    for (std::int64_t x = 0; x < mask.width(); ++x) out.set(x, y, mask.at(x, y));
  }
  return out;
}

FlowField crop(const FlowField& flow, std::int64_t width, std::int64_t height) {
  if (width > flow.width() || height > flow.height()) {
    throw InvalidShape("crop: target larger than field");
  }
  if (width == flow.width() && height == flow.height()) return flow;
  FlowField out(width, height);
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) {
      out.dx(x, y) = flow.dx(x, y);
      out.dy(x, y) = flow.dy(x, y);
    }
  }
  return out;
}

}  // namespace nmsr
