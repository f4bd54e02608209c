#include "nmsr/unet.hpp"

#include <cmath>

#include "binary_io.hpp"
#include "nmsr/error.hpp"
#include "nmsr/rng.hpp"

namespace nmsr {
namespace {

constexpr char kMagic[] = "NMSRCKPT";
constexpr std::uint32_t kFormatVersion = 1;

struct LayerSpec {
  std::string name;
  int in_channels;
  int out_channels;
};

std::vector<LayerSpec> layer_specs(const ArchDescriptor& arch) {
  std::vector<LayerSpec> specs;
  std::vector<int> skip_channels{arch.input_channels};
  int channels = arch.input_channels;
  for (std::size_t i = 0; i < arch.encoder.size(); ++i) {
    specs.push_back({"enc" + std::to_string(i), channels, arch.encoder[i]});
    channels = arch.encoder[i];
    skip_channels.push_back(channels);
  }
  // The deepest encoder output feeds the decoder directly, not as a skip.
  skip_channels.pop_back();
  for (std::size_t j = 0; j < arch.decoder.size(); ++j) {
    const int skip = skip_channels[skip_channels.size() - 1 - j];
    specs.push_back({"dec" + std::to_string(j), channels + skip, arch.decoder[j]});
    channels = arch.decoder[j];
  }
  specs.push_back({"flow", channels, arch.output_channels});
  return specs;
}

void check_layers(const ModelParams& params) {
  const auto specs = layer_specs(params.arch);
  if (specs.size() != params.layers.size()) {
    throw ConfigError("model has " + std::to_string(params.layers.size()) +
                      " layers, architecture expects " + std::to_string(specs.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& layer = params.layers[i];
    const Shape kshape{specs[i].out_channels, specs[i].in_channels, 3, 3};
    const Shape bshape{specs[i].out_channels};
    if (layer.name != specs[i].name || layer.kernel.shape() != kshape ||
        layer.bias.shape() != bshape) {
      throw ConfigError("layer '" + layer.name + "' " + shape_str(layer.kernel.shape()) +
                        " does not match architecture layer '" + specs[i].name + "' " +
                        shape_str(kshape));
    }
  }
}

}  // namespace

void ArchDescriptor::validate() const {
  if (encoder.empty()) throw ConfigError("architecture needs at least one encoder level");
  if (encoder.size() != decoder.size()) {
    throw ConfigError("encoder and decoder channel lists must have equal length");
  }
  if (input_channels != 2 || output_channels != 2) {
    throw ConfigError("registration network takes 2 input and produces 2 output channels");
  }
  for (int c : encoder) {
    if (c <= 0) throw ConfigError("encoder channel counts must be positive");
  }
  for (int c : decoder) {
    if (c <= 0) throw ConfigError("decoder channel counts must be positive");
  }
}

ModelParams ModelParams::clone() const {
  ModelParams out{arch, seed, {}};
  out.layers.reserve(layers.size());
  for (const auto& l : layers) out.layers.push_back({l.name, l.kernel.clone(), l.bias.clone()});
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (const auto& l : layers) {
    out.push_back(l.kernel);
    out.push_back(l.bias);
  }
  return out;
}

std::int64_t ModelParams::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& l : layers) n += l.kernel.numel() + l.bias.numel();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& l : layers) {
    l.kernel.zero_grad();
    l.bias.zero_grad();
  }
}

ModelParams init_params(const ArchDescriptor& arch, std::uint64_t seed) {
  arch.validate();
  ModelParams params{arch, seed, {}};
  Rng rng(seed);
  const auto specs = layer_specs(arch);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& spec = specs[i];
    const bool final_layer = i + 1 == specs.size();
    const double fan_in = static_cast<double>(spec.in_channels * 9);
    const double bound = final_layer
                             ? kFinalLayerInitBound
                             : std::sqrt(6.0 / ((1.0 + kLeakySlope * kLeakySlope) * fan_in));
    std::vector<double> k(static_cast<std::size_t>(spec.out_channels * spec.in_channels * 9));
    for (auto& v : k) v = rng.uniform(-bound, bound);
    params.layers.push_back(
        {spec.name,
         Tensor::parameter({spec.out_channels, spec.in_channels, 3, 3}, std::move(k)),
         Tensor::parameter({spec.out_channels},
                           std::vector<double>(static_cast<std::size_t>(spec.out_channels), 0.0))});
  }
  return params;
}

Tensor unet_forward(Graph& g, const ModelParams& params, const Tensor& moving,
                    const Tensor& fixed) {
  const auto& arch = params.arch;
  if (moving.shape() != fixed.shape() || moving.rank() != 4 || moving.dim(1) != 1) {
    throw InvalidShape("unet: moving " + shape_str(moving.shape()) + " and fixed " +
                       shape_str(fixed.shape()) + " must both be [N,1,H,W]");
  }
  const auto m = arch.stride_multiple();
  if (moving.dim(2) % m != 0 || moving.dim(3) % m != 0) {
    throw InvalidShape("unet: input " + std::to_string(moving.dim(3)) + "x" +
                       std::to_string(moving.dim(2)) + " must be divisible by " +
                       std::to_string(m) + "; reflect-pad the frames first");
  }
  const auto depth = static_cast<std::size_t>(arch.depth());
  if (params.layers.size() != 2 * depth + 1) {
    throw ConfigError("unet: parameter set does not match its architecture");
  }
  Tensor x = ops::concat_channels(g, moving, fixed);
  std::vector<Tensor> skips{x};
  for (std::size_t i = 0; i < depth; ++i) {
    const auto& l = params.layers[i];
    x = ops::leaky_relu(g, ops::conv2d(g, x, l.kernel, l.bias, 2, 1), kLeakySlope);
    skips.push_back(x);
  }
  skips.pop_back();
  for (std::size_t j = 0; j < depth; ++j) {
    const auto& l = params.layers[depth + j];
    x = ops::concat_channels(g, ops::upsample2x(g, x), skips[skips.size() - 1 - j]);
    x = ops::leaky_relu(g, ops::conv2d(g, x, l.kernel, l.bias, 1, 1), kLeakySlope);
  }
  const auto& head = params.layers.back();
  return ops::conv2d(g, x, head.kernel, head.bias, 1, 1);
}

FlowField predict_flow(const ModelParams& params, const Image& moving, const Image& fixed) {
  Graph g;
  return flow_from_tensor(unet_forward(g, params, to_tensor(moving), to_tensor(fixed)));
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  detail::ByteWriter w;
  w.bytes(std::string(kMagic, 8));
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(params.arch.input_channels));
  w.u32(static_cast<std::uint32_t>(params.arch.output_channels));
  w.u32(static_cast<std::uint32_t>(params.arch.encoder.size()));
  for (int c : params.arch.encoder) w.u32(static_cast<std::uint32_t>(c));
  w.u32(static_cast<std::uint32_t>(params.arch.decoder.size()));
  for (int c : params.arch.decoder) w.u32(static_cast<std::uint32_t>(c));
  w.u64(params.seed);
  w.u32(static_cast<std::uint32_t>(params.layers.size()));
  auto put_tensor = [&w](const Tensor& t) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f64(v);
  };
  for (const auto& l : params.layers) {
    w.u32(static_cast<std::uint32_t>(l.name.size()));
    w.bytes(l.name);
    put_tensor(l.kernel);
    put_tensor(l.bias);
  }
  detail::write_file(path.string(), w.buffer());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  const auto data = detail::read_file(path.string());
  detail::ByteReader r(data, "checkpoint " + path.string());
  if (r.bytes(8) != std::string(kMagic, 8)) r.fail_at(0, "bad magic, expected NMSRCKPT");
  if (const auto version = r.u32(); version != kFormatVersion) {
    r.fail("unsupported format version " + std::to_string(version));
  }
  ModelParams params;
  params.arch.input_channels = static_cast<int>(r.u32());
  params.arch.output_channels = static_cast<int>(r.u32());
  auto read_list = [&r]() {
    const auto n = r.u32();
    if (n > 64) r.fail("implausible channel list length");
    std::vector<int> v(n);
    for (auto& c : v) c = static_cast<int>(r.u32());
    return v;
  };
  params.arch.encoder = read_list();
  params.arch.decoder = read_list();
  params.seed = r.u64();
  const auto n_layers = r.u32();
  if (n_layers > 256) r.fail("implausible layer count");
  auto get_tensor = [&r]() {
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) r.fail("bad tensor rank");
    Shape shape(rank);
    std::int64_t numel = 1;
    for (auto& d : shape) {
      d = r.u32();
      if (d == 0) r.fail("zero tensor dimension");
      numel *= d;
    }
    if (static_cast<std::uint64_t>(numel) * 8 > r.remaining()) r.fail("tensor data truncated");
    std::vector<double> values(static_cast<std::size_t>(numel));
    for (auto& v : values) v = r.f64();
    return Tensor::parameter(std::move(shape), std::move(values));
  };
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const auto len = r.u32();
    if (len > 1024) r.fail("implausible layer name length");
    Layer l;
    l.name = r.bytes(len);
    l.kernel = get_tensor();
    l.bias = get_tensor();
    params.layers.push_back(std::move(l));
  }
  r.expect_end();
  try {
    params.arch.validate();
    check_layers(params);
  } catch (const ConfigError& e) {
    throw ConfigError("checkpoint " + path.string() + ": " + e.what());
  }
  return params;
}

ModelParams load_checkpoint(const std::filesystem::path& path, const ArchDescriptor& expected) {
  auto params = load_checkpoint(path);
  if (!(params.arch == expected)) {
    throw ConfigError("checkpoint " + path.string() +
                      " was saved with a different network architecture");
  }
  return params;
}

}  // namespace nmsr
