#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nmsr/image.hpp"

namespace nmsr {

/// Frames I_1..I_n of one acquisition, all of the same size.
struct ImageSequence {
  std::string id;
  std::vector<Image> frames;
  /// Empty, or one region mask per frame.
  std::vector<Mask> masks;

  std::int64_t width() const { return frames.empty() ? 0 : frames.front().width(); }
  std::int64_t height() const { return frames.empty() ? 0 : frames.front().height(); }
  std::size_t pair_count() const { return frames.empty() ? 0 : frames.size() - 1; }

  /// Throws ConfigError unless n >= 2, dimensions agree and masks match.
  void validate() const;
};

}  // namespace nmsr
