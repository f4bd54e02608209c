#include <doctest.h>

#include "nmsr/error.hpp"
#include "nmsr/losses.hpp"
#include "nmsr/unet.hpp"
#include "support.hpp"

using namespace nmsr;

namespace {

const ArchDescriptor kMini{{4, 4}, {4, 4}};

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  if (!(a.arch == b.arch) || a.seed != b.seed || a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (x.name != y.name || x.kernel.shape() != y.kernel.shape()) return false;
    if (!std::equal(x.kernel.data().begin(), x.kernel.data().end(), y.kernel.data().begin())) return false;
    if (!std::equal(x.bias.data().begin(), x.bias.data().end(), y.bias.data().begin())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("architecture descriptor") {
  ArchDescriptor def;
  CHECK(def.encoder == std::vector<int>{16, 32, 32, 32});
  CHECK(def.decoder == std::vector<int>{32, 32, 32, 16});
  CHECK(def.stride_multiple() == 16);
  ArchDescriptor bad{{8, 8}, {8}};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(init_params(bad, 0), ConfigError);
}

TEST_CASE("initialization") {
  const auto a = init_params(ArchDescriptor{}, 42);
  const auto b = init_params(ArchDescriptor{}, 42);
  const auto c = init_params(ArchDescriptor{}, 43);
  CHECK(params_equal(a, b));
  CHECK_FALSE(params_equal(a, c));
  CHECK(a.layers.size() == 9);
  CHECK(a.layers.front().name == "enc0");
  CHECK(a.layers.back().name == "flow");
  CHECK(max_abs(a.layers.back().kernel.data()) <= 1e-4);
  CHECK(max_abs(a.layers.back().bias.data()) == 0.0);
  // Hidden kernels are fan-in scaled: enc0 sees 2*9 inputs.
  const double bound = std::sqrt(6.0 / (1.04 * 18.0));
  CHECK(max_abs(a.layers.front().kernel.data()) <= bound);
  CHECK(max_abs(a.layers.front().kernel.data()) > 0.5 * bound);
  // dec0 concatenates the deepest upsampled features with the third skip.
  CHECK(a.layers[4].kernel.shape() == Shape{32, 64, 3, 3});
  CHECK(a.layers[7].kernel.shape() == Shape{16, 34, 3, 3});
}

TEST_CASE("forward shapes and near-zero initial flow") {
  std::mt19937_64 gen(31);
  const auto params = init_params(ArchDescriptor{}, 7);
  const auto m = testing::random_image(gen, 64, 64);
  const auto f = testing::random_image(gen, 64, 64);
  const auto flow = predict_flow(params, m, f);
  CHECK(flow.width() == 64);
  CHECK(flow.height() == 64);
  CHECK(flow.max_magnitude() < 1e-2);
  CHECK(predict_flow(params, m, m).max_magnitude() < 1e-2);
  // Pure function of its inputs.
  CHECK(predict_flow(params, m, f) == flow);

  const auto wide = predict_flow(params, testing::random_image(gen, 128, 64), testing::random_image(gen, 128, 64));
  CHECK(wide.width() == 128);
  CHECK(wide.height() == 64);

  try {
    predict_flow(params, testing::random_image(gen, 40, 64), testing::random_image(gen, 40, 64));
    FAIL("expected InvalidShape");
  } catch (const InvalidShape& e) {
    CHECK(std::string(e.what()).find("pad") != std::string::npos);
  }
}

TEST_CASE("U-Net + loss composite gradient on a 16x16 miniature") {
  auto params = init_params(kMini, 5);
  // Move the head off its near-zero init so the flow avoids integer sample
  // positions, where bilinear sampling has kinks.
  std::mt19937_64 gen(32);
  auto head = params.layers.back();
  for (auto& v : head.kernel.data()) v = std::uniform_real_distribution<double>(-0.05, 0.05)(gen);
  head.bias.data()[0] = 0.35;
  head.bias.data()[1] = -0.3;
  const Tensor moving = to_tensor(testing::blob_image(16, 16, 0.1));
  const Tensor fixed = to_tensor(testing::blob_image(16, 16, 0.6));
  LossConfig cfg;
  cfg.ncc_radius = 2;
  auto build = [&](Graph& g) {
    const auto flow = unet_forward(g, params, moving, fixed);
    return total_loss(g, ops::grid_sample_bilinear(g, moving, flow), fixed, flow, cfg).total;
  };
  params.zero_grad();
  Graph g;
  g.backward(build(g));
  auto value = [&] {
    Graph h;
    return build(h).item();
  };
  for (auto& layer : params.layers) {
    for (Tensor* t : {&layer.kernel, &layer.bias}) {
      INFO(layer.name);
      CHECK(testing::relative_error(testing::numeric_gradient(value, *t), t->grad()) < 1e-4);
    }
  }
}

TEST_CASE("clone is independent") {
  auto a = init_params(kMini, 1);
  auto b = a.clone();
  b.layers[0].kernel.data()[0] += 1.0;
  CHECK(a.layers[0].kernel.data()[0] != b.layers[0].kernel.data()[0]);
  CHECK(a.parameter_count() == b.parameter_count());
  // 2->4, 4->4, (4+4)->4, (4+2)->4, 4->2
  CHECK(a.parameter_count() == (4 * 2 * 9 + 4) + (4 * 4 * 9 + 4) + (4 * 8 * 9 + 4) +
                                   (4 * 6 * 9 + 4) + (2 * 4 * 9 + 2));
}

TEST_CASE("checkpoint round trip and rejection") {
  const auto dir = testing::scratch_dir("ckpt");
  const auto params = init_params(kMini, 99);
  save_checkpoint(dir / "a.ckpt", params);
  CHECK(params_equal(load_checkpoint(dir / "a.ckpt"), params));
  CHECK(params_equal(load_checkpoint(dir / "a.ckpt", kMini), params));
  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", ArchDescriptor{}), ConfigError);

  const auto bytes = testing::read_bytes(dir / "a.ckpt");
  CHECK(bytes.substr(0, 8) == "NMSRCKPT");
  auto write = [&](const std::string& name, const std::string& data) {
    std::ofstream(dir / name, std::ios::binary) << data;
    return dir / name;
  };
  CHECK_THROWS_AS(load_checkpoint(write("trunc.ckpt", bytes.substr(0, bytes.size() - 3))), ParseError);
  CHECK_THROWS_AS(load_checkpoint(write("trail.ckpt", bytes + "x")), ParseError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(load_checkpoint(write("magic.ckpt", bad_magic)), ParseError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}
