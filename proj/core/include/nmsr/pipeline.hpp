#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nmsr/image.hpp"
#include "nmsr/io.hpp"
#include "nmsr/losses.hpp"
#include "nmsr/optimizer.hpp"
#include "nmsr/sequence.hpp"
#include "nmsr/unet.hpp"
#include "nmsr/warp_field.hpp"

namespace nmsr {

enum class Variant { single_scale, multi_scale };

/// How each scale's network is initialized.
///   none                 fresh weights at every scale
///   from_previous_scale  copy of the previous scale's optimized weights
///   from_checkpoint      scale-matched pretrained checkpoint at every scale
enum class WarmStart { none, from_previous_scale, from_checkpoint };

std::string to_string(Variant v);
std::string to_string(WarmStart w);
Variant parse_variant(const std::string& text);
WarmStart parse_warm_start(const std::string& text);

struct ScaleSchedule {
  std::vector<Scale> scales{Scale{8}, Scale{4}, Scale{2}, Scale{1}};
  int steps = 3500;  // optimization steps per scale, one frame pair per step
  WarmStart warm_start = WarmStart::none;
  std::filesystem::path checkpoint_dir;

  /// Scales must be strictly increasing (coarse to fine) and end at 1.
  void validate() const;
  std::string scales_str() const;  // "1/8,1/4,1/2,1"
};

std::vector<Scale> parse_scale_list(const std::string& text);

struct RegistrationConfig {
  ScaleSchedule schedule;
  LossConfig loss;
  AdamConfig adam;
  ArchDescriptor arch;
  std::uint64_t seed = 0;
  Variant variant = Variant::multi_scale;

  /// The scales actually run: just {1} for the single-scale variant.
  std::vector<Scale> effective_scales() const;
  void validate() const;
};

struct LossRecord {
  long step = 0;
  int pair_index = 0;  // 1-based pair t (frames t, t+1)
  double loss = 0.0;
  double ncc = 0.0;
  double smooth = 0.0;
};

struct ScaleReport {
  Scale scale;
  std::vector<LossRecord> curve;
  double seconds = 0.0;

  /// Mean total loss over the last `window` steps.
  double final_loss(std::size_t window) const;
};

struct RegistrationResult {
  /// Full-resolution field F_t for every pair t = 1..n-1.
  std::vector<FlowField> fields;
  std::vector<ScaleReport> scales;
  /// Optimized network of every scale, in schedule order.
  std::vector<ModelParams> params;
  RegistrationConfig config;
};

/// Per-pair network inputs at one scale.
struct ScaleInputs {
  Image moving;  // downsample(warp(I_t, accumulated_t), s)
  Image fixed;   // downsample(I_{t+1}, s)
  std::optional<Mask> loss_mask;
};

/// Builds the moving/fixed pair for every t. The full-resolution frame is
/// warped by the accumulated field first and the result is then downsampled.
/// `valid` marks real (non-padding) pixels; region masks of the fixed frame
/// are intersected with it.
std::vector<ScaleInputs> prepare_scale_inputs(const ImageSequence& seq,
                                              std::span<const FlowField> accumulated, Scale s,
                                              const std::optional<Mask>& valid = std::nullopt);

struct ScaleOutcome {
  /// Predicted fields at scale-s resolution, one per pair.
  std::vector<FlowField> fields;
  ScaleReport report;
};

/// Optimizes `params` in place on one scale of one sequence and returns the
/// final network's fields. Frame dimensions must already be divisible by
/// s.factor * 2^depth.
ScaleOutcome run_scale(const ImageSequence& seq, std::span<const FlowField> accumulated, Scale s,
                       ModelParams& params, const RegistrationConfig& cfg);

/// Full coarse-to-fine registration of one sequence. Frames are
/// reflect-padded to a multiple of (coarsest factor) * 2^depth and fields are
/// cropped back afterwards.
RegistrationResult run_nmsr(const ImageSequence& seq, const RegistrationConfig& cfg);

/// Runs the same per-scale objective over the pairs of several sequences,
/// cycling through them in order, for `iterations` steps per scale, and
/// writes one checkpoint per scale into `out_dir` (if non-empty).
std::vector<ModelParams> pretrain(std::span<const ImageSequence> train_set,
                                  const RegistrationConfig& cfg, int iterations,
                                  const std::filesystem::path& out_dir);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Scale s);
std::uint64_t scale_seed(std::uint64_t seed, Scale s);

/// Plain-text key/value run manifest; `extra` entries are appended verbatim.
KeyValues manifest_entries(const RegistrationResult& result, const ImageSequence& seq);
void write_results(const std::filesystem::path& dir, const RegistrationResult& result,
                   const ImageSequence& seq, const KeyValues& extra = {});
std::string loss_curve_csv(const ScaleReport& report);
std::string loss_curve_name(Scale s);

}  // namespace nmsr
