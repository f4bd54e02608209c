#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nmsr/tensor.hpp"

namespace nmsr {

/// Single-channel intensity grid, row-major, values nominally in [0,1].
class Image {
 public:
  Image() = default;
  Image(std::int64_t width, std::int64_t height, double fill = 0.0);
  Image(std::int64_t width, std::int64_t height, std::vector<double> pixels);

  std::int64_t width() const { return width_; }
  std::int64_t height() const { return height_; }
  std::int64_t size() const { return width_ * height_; }
  bool empty() const { return pixels_.empty(); }

  double& at(std::int64_t x, std::int64_t y) { return pixels_[y * width_ + x]; }
  double at(std::int64_t x, std::int64_t y) const { return pixels_[y * width_ + x]; }
  std::span<double> pixels() { return pixels_; }
  std::span<const double> pixels() const { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::int64_t width_ = 0;
  std::int64_t height_ = 0;
  std::vector<double> pixels_;
};

/// Per-pixel displacement (dx, dy) in pixels of this field's own lattice.
/// Convention: the field F registers image A to image B when A sampled at
/// p + F(p) reproduces B(p).
class FlowField {
 public:
  FlowField() = default;
  FlowField(std::int64_t width, std::int64_t height, double dx = 0.0, double dy = 0.0);

  std::int64_t width() const { return width_; }
  std::int64_t height() const { return height_; }
  std::int64_t size() const { return width_ * height_; }

  double& dx(std::int64_t x, std::int64_t y) { return dx_[y * width_ + x]; }
  double& dy(std::int64_t x, std::int64_t y) { return dy_[y * width_ + x]; }
  double dx(std::int64_t x, std::int64_t y) const { return dx_[y * width_ + x]; }
  double dy(std::int64_t x, std::int64_t y) const { return dy_[y * width_ + x]; }

  std::span<double> dx_plane() { return dx_; }
  std::span<double> dy_plane() { return dy_; }
  std::span<const double> dx_plane() const { return dx_; }
  std::span<const double> dy_plane() const { return dy_; }

  bool all_finite() const;
  double max_magnitude() const;

  friend bool operator==(const FlowField&, const FlowField&) = default;

 private:
  std::int64_t width_ = 0;
  std::int64_t height_ = 0;
  std::vector<double> dx_;
  std::vector<double> dy_;
};

/// Boolean region of interest.
class Mask {
 public:
  Mask() = default;
  Mask(std::int64_t width, std::int64_t height, bool fill = true);

  std::int64_t width() const { return width_; }
  std::int64_t height() const { return height_; }
  bool at(std::int64_t x, std::int64_t y) const { return values_[y * width_ + x] != 0; }
  void set(std::int64_t x, std::int64_t y, bool on) { values_[y * width_ + x] = on ? 1 : 0; }
  bool contains(std::int64_t index) const { return values_[index] != 0; }
  std::int64_t count() const;

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  std::int64_t width_ = 0;
  std::int64_t height_ = 0;
  std::vector<std::uint8_t> values_;
};

Mask operator&(const Mask& a, const Mask& b);

/// [1,1,H,W] tensor holding a copy of the image.
Tensor to_tensor(const Image& img);
/// [1,2,H,W] tensor: channel 0 dx, channel 1 dy.
Tensor to_tensor(const FlowField& flow);
Image image_from_tensor(const Tensor& t);
FlowField flow_from_tensor(const Tensor& t);

}  // namespace nmsr
