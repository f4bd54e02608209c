#include "nmsr/image.hpp"

#include <algorithm>
#include <cmath>

#include "nmsr/error.hpp"
#include "nmsr/sequence.hpp"

namespace nmsr {
namespace {

void check_dims(std::int64_t width, std::int64_t height) {
  if (width <= 0 || height <= 0) {
    throw InvalidShape("image dimensions must be positive, got " + std::to_string(width) + "x" +
                       std::to_string(height));
  }
}

}  // namespace

Image::Image(std::int64_t width, std::int64_t height, double fill)
    : width_(width), height_(height) {
  check_dims(width, height);
  pixels_.assign(static_cast<std::size_t>(width * height), fill);
}

Image::Image(std::int64_t width, std::int64_t height, std::vector<double> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  check_dims(width, height);
  if (static_cast<std::int64_t>(pixels_.size()) != width * height) {
    throw InvalidShape("image pixel count does not match " + std::to_string(width) + "x" +
                       std::to_string(height));
  }
}

FlowField::FlowField(std::int64_t width, std::int64_t height, double dx, double dy)
    : width_(width), height_(height) {
  check_dims(width, height);
  dx_.assign(static_cast<std::size_t>(width * height), dx);
  dy_.assign(static_cast<std::size_t>(width * height), dy);
}

bool FlowField::all_finite() const {
  auto finite = [](double v) { return std::isfinite(v); };
  return std::all_of(dx_.begin(), dx_.end(), finite) && std::all_of(dy_.begin(), dy_.end(), finite);
}

double FlowField::max_magnitude() const {
  double m = 0.0;
  for (std::size_t i = 0; i < dx_.size(); ++i) m = std::max(m, std::hypot(dx_[i], dy_[i]));
  return m;
}

Mask::Mask(std::int64_t width, std::int64_t height, bool fill) : width_(width), height_(height) {
  check_dims(width, height);
  values_.assign(static_cast<std::size_t>(width * height), fill ? 1 : 0);
}

std::int64_t Mask::count() const {
  return std::count_if(values_.begin(), values_.end(), [](std::uint8_t v) { return v != 0; });
}

Mask operator&(const Mask& a, const Mask& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw InvalidShape("mask intersection: dimension mismatch");
  }
  Mask out(a.width(), a.height(), false);
  for (std::int64_t y = 0; y < a.height(); ++y) {
    for (std::int64_t x = 0; x < a.width(); ++x) out.set(x, y, a.at(x, y) && b.at(x, y));
  }
  return out;
}

Tensor to_tensor(const Image& img) {
  return Tensor({1, 1, img.height(), img.width()},
                std::vector<double>(img.pixels().begin(), img.pixels().end()));
}

Tensor to_tensor(const FlowField& flow) {
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(2 * flow.size()));
  values.insert(values.end(), flow.dx_plane().begin(), flow.dx_plane().end());
  values.insert(values.end(), flow.dy_plane().begin(), flow.dy_plane().end());
  return Tensor({1, 2, flow.height(), flow.width()}, std::move(values));
}

Image image_from_tensor(const Tensor& t) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 1) {
    throw InvalidShape("expected a [1,1,H,W] tensor, got " + shape_str(t.shape()));
  }
  return Image(t.dim(3), t.dim(2), std::vector<double>(t.data().begin(), t.data().end()));
}

FlowField flow_from_tensor(const Tensor& t) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 2) {
    throw InvalidShape("expected a [1,2,H,W] tensor, got " + shape_str(t.shape()));
  }
  const auto h = t.dim(2);
  const auto w = t.dim(3);
  FlowField f(w, h);
  std::copy_n(t.data().begin(), h * w, f.dx_plane().begin());
  std::copy_n(t.data().begin() + h * w, h * w, f.dy_plane().begin());
  return f;
}

void ImageSequence::validate() const {
  if (frames.size() < 2) throw ConfigError("sequence '" + id + "' needs at least two frames");
  for (const auto& f : frames) {
    if (f.width() != width() || f.height() != height()) {
      throw ConfigError("sequence '" + id + "' has frames of differing dimensions");
    }
  }
  if (!masks.empty()) {
    if (masks.size() != frames.size()) {
      throw ConfigError("sequence '" + id + "' must have one mask per frame or none");
    }
    for (const auto& m : masks) {
      if (m.width() != width() || m.height() != height()) {
        throw ConfigError("sequence '" + id + "' has a mask of differing dimensions");
      }
    }
  }
}

}  // namespace nmsr
