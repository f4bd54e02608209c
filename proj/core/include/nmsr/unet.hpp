#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nmsr/image.hpp"
#include "nmsr/tensor.hpp"

namespace nmsr {

/// Channel layout of the registration U-Net. Encoder level i halves the
/// resolution with a stride-2 conv; decoder level j doubles it, concatenates
/// the mirrored skip and applies a 3x3 conv. A final 3x3 conv emits the field.
struct ArchDescriptor {
  std::vector<int> encoder{16, 32, 32, 32};
  std::vector<int> decoder{32, 32, 32, 16};
  int input_channels = 2;
  int output_channels = 2;

  int depth() const { return static_cast<int>(encoder.size()); }
  /// Input height and width must be multiples of this.
  std::int64_t stride_multiple() const { return std::int64_t{1} << encoder.size(); }
  void validate() const;
  friend bool operator==(const ArchDescriptor&, const ArchDescriptor&) = default;
};

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kFinalLayerInitBound = 1e-5;

struct Layer {
  std::string name;
  Tensor kernel;
  Tensor bias;
};

/// Learnable parameters of one network instance. Copies share storage; use
/// clone() for an independent set.
struct ModelParams {
  ArchDescriptor arch;
  std::uint64_t seed = 0;
  std::vector<Layer> layers;

  ModelParams clone() const;
  std::vector<Tensor> tensors() const;
  std::int64_t parameter_count() const;
  void zero_grad();
};

/// Deterministic initialization: He-uniform hidden layers (leaky-relu gain),
/// zero biases and a final layer bounded by kFinalLayerInitBound.
ModelParams init_params(const ArchDescriptor& arch, std::uint64_t seed);

/// Runs the network on a [1,1,H,W] moving/fixed pair; returns the [1,2,H,W]
/// field (channel 0 dx, channel 1 dy) in input-resolution pixels.
Tensor unet_forward(Graph& g, const ModelParams& params, const Tensor& moving,
                    const Tensor& fixed);

/// Inference convenience wrapper around unet_forward.
FlowField predict_flow(const ModelParams& params, const Image& moving, const Image& fixed);

/// Binary checkpoint: "NMSRCKPT", u32 version, architecture, seed, then every
/// layer's name, shapes and little-endian f64 values.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);
/// Loads and rejects a checkpoint whose architecture differs from `expected`.
ModelParams load_checkpoint(const std::filesystem::path& path, const ArchDescriptor& expected);

}  // namespace nmsr
