#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nmsr/image.hpp"
#include "nmsr/sequence.hpp"

namespace nmsr {

// ---- Netpbm ---------------------------------------------------------------

/// Reads a binary P5 file (maxval 255 or 65535) and maps it linearly to [0,1].
Image read_pgm(const std::filesystem::path& path);
/// Writes P5 with the given maxval (255 or 65535); values are clamped to
/// [0,1] and quantized with round-half-up.
void write_pgm(const std::filesystem::path& path, const Image& img, int maxval = 255);

/// Non-zero pixels are inside.
Mask read_mask_pgm(const std::filesystem::path& path);
void write_mask_pgm(const std::filesystem::path& path, const Mask& mask);

struct ColorImage {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major

  std::uint8_t channel(std::int64_t x, std::int64_t y, int c) const {
    return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
  friend bool operator==(const ColorImage&, const ColorImage&) = default;
};

void write_ppm(const std::filesystem::path& path, const ColorImage& img);
ColorImage read_ppm(const std::filesystem::path& path);

// ---- Middlebury .flo ------------------------------------------------------

/// "PIEH", i32 width, i32 height, then row-major interleaved (dx, dy) as
/// little-endian f32.
FlowField read_flo(const std::filesystem::path& path);
void write_flo(const std::filesystem::path& path, const FlowField& flow);

// ---- Visualization --------------------------------------------------------

/// Colour-wheel rendering: hue encodes direction, saturation encodes
/// magnitude relative to `max_magnitude` (99th percentile when absent).
/// Zero motion is white.
ColorImage flow_to_color(const FlowField& flow, std::optional<double> max_magnitude = {});

/// RGB for a unit-or-smaller vector; exposed for tests of wheel continuity.
std::array<double, 3> wheel_color(double dx, double dy);

// ---- Key/value metadata ---------------------------------------------------

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// UTF-8 lines "key = value"; blank lines and lines starting with '#' skipped.
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);
std::optional<std::string> find_value(const KeyValues& kv, const std::string& key);

// ---- Sequence directories -------------------------------------------------

/// frame_0001.pgm .. frame_NNNN.pgm, optional mask_NNNN.pgm, optional
/// flow_NNNN.flo (one per consecutive pair) and metadata.txt.
std::string frame_name(std::size_t index);  // 1-based
std::string mask_name(std::size_t index);
std::string flow_name(std::size_t index);

struct SequenceDir {
  ImageSequence sequence;
  std::vector<FlowField> flows;  // empty when absent
  KeyValues metadata;
};

SequenceDir read_sequence_dir(const std::filesystem::path& dir);
/// Reads flow_0001.flo, flow_0002.flo, ... until the first gap; empty when none exist.
std::vector<FlowField> read_flow_dir(const std::filesystem::path& dir);
void write_sequence_dir(const std::filesystem::path& dir, const SequenceDir& seq,
                        int frame_maxval = 65535);

}  // namespace nmsr
