#pragma once

#include <compare>
#include <string>
#include <string_view>

#include "nmsr/image.hpp"

namespace nmsr {

/// A pyramid level, stored as the integer reduction factor 1/s (s = 1/factor).
struct Scale {
  int factor = 1;

  double fraction() const { return 1.0 / factor; }
  std::string str() const;  // "1", "1/2", "1/8", ...
  friend auto operator<=>(const Scale&, const Scale&) = default;
};

/// Accepts "1", "1/4", "0.25" and rejects anything that is not 1/k, k >= 1.
Scale parse_scale(std::string_view text);

/// Area-average pooling over factor x factor blocks. Scale 1 is the identity.
Image downsample(const Image& img, Scale s);
/// A coarse pixel is inside when at least half of its block is.
Mask downsample(const Mask& mask, Scale s);

/// out(p) = img(p + flow(p)), bilinear, border-clamped.
Image warp(const Image& img, const FlowField& flow);

/// Upsamples a coarse field onto a lattice `factor` times finer and converts
/// its vectors to fine-lattice pixels (multiplies them by the factor). Pixel
/// centres are aligned the same way area pooling aligns them.
FlowField promote_field(const FlowField& coarse, std::int64_t width, std::int64_t height);

/// out(p) = first(p) + second(p + first(p)), with border-clamped bilinear
/// sampling of `second`. Pulling an image through the result equals pulling
/// it through `second` and then through `first`:
///   warp(img, compose(first, second)) == warp(warp(img, second), first).
FlowField compose(const FlowField& first, const FlowField& second);

/// Reflect-pads (mirror without repeating the edge) on the right and bottom.
Image reflect_pad(const Image& img, std::int64_t width, std::int64_t height);
/// Zero-pads a mask on the right and bottom.
Mask pad_mask(const Mask& mask, std::int64_t width, std::int64_t height);
/// Keeps the top-left width x height block.
FlowField crop(const FlowField& flow, std::int64_t width, std::int64_t height);

}  // namespace nmsr
