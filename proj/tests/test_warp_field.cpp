#include <doctest.h>

#include "nmsr/error.hpp"
#include "nmsr/warp_field.hpp"
#include "support.hpp"

using namespace nmsr;

namespace {

double max_diff(const FlowField& a, const FlowField& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    m = std::max({m, std::abs(a.dx_plane()[i] - b.dx_plane()[i]),
                  std::abs(a.dy_plane()[i] - b.dy_plane()[i])});
  }
  return m;
}

FlowField smooth_field(std::int64_t w, std::int64_t h, double amp, double phase) {
  FlowField f(w, h);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      f.dx(x, y) = amp * std::sin(0.11 * y + phase);
      f.dy(x, y) = amp * std::cos(0.07 * x - phase);
    }
  }
  return f;
}

}  // namespace

TEST_CASE("scale parsing and printing") {
  CHECK(parse_scale("1/8").factor == 8);
  CHECK(parse_scale("0.25").factor == 4);
  CHECK(parse_scale("1").factor == 1);
  CHECK(Scale{8}.str() == "1/8");
  CHECK(Scale{1}.str() == "1");
  CHECK(Scale{8} > Scale{2});
  CHECK_THROWS_AS(parse_scale("0.3"), ConfigError);
  CHECK_THROWS_AS(parse_scale("2"), ConfigError);
  CHECK_THROWS_AS(parse_scale("abc"), ConfigError);
  CHECK_THROWS_AS(parse_scale("1/0"), ConfigError);
}

TEST_CASE("downsample") {
  std::mt19937_64 gen(11);
  const auto img = testing::random_image(gen, 16, 8);
  CHECK(downsample(img, Scale{1}) == img);

  const Image small(2, 2, std::vector<double>{0, 1, 2, 3});
  const auto one = downsample(small, Scale{2});
  REQUIRE(one.width() == 1);
  CHECK(one.at(0, 0) == 1.5);

  const Image constant(16, 16, 0.37);
  for (int f : {2, 4, 8}) {
    const auto d = downsample(constant, Scale{f});
    for (double v : d.pixels()) CHECK(v == doctest::Approx(0.37).epsilon(1e-15));
  }
  CHECK_THROWS_AS(downsample(Image(10, 8), Scale{4}), InvalidShape);

  // Block means nest: exact on dyadic values, to rounding on arbitrary ones.
  Image dyadic(16, 16);
  for (std::int64_t i = 0; i < 256; ++i) dyadic.pixels()[i] = static_cast<double>((i * 37) % 256) / 256.0;
  CHECK(downsample(downsample(dyadic, Scale{2}), Scale{2}) == downsample(dyadic, Scale{4}));
  const auto a = downsample(downsample(img, Scale{2}), Scale{2});
  const auto b = downsample(img, Scale{4});
  for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a.pixels()[i] == doctest::Approx(b.pixels()[i]).epsilon(1e-14));
}

TEST_CASE("mask downsample keeps half-covered blocks") {
  Mask m(4, 2, false);
  m.set(0, 0, true);
  m.set(1, 0, true);  // block 0: 2 of 4
  m.set(2, 0, true);  // block 1: 1 of 4
  const auto d = downsample(m, Scale{2});
  CHECK(d.at(0, 0));
  CHECK_FALSE(d.at(1, 0));
}

TEST_CASE("warp") {
  std::mt19937_64 gen(12);
  const auto img = testing::random_image(gen, 9, 7);
  CHECK(warp(img, FlowField(9, 7)) == img);

  const std::int64_t w = 10;
  Image ramp(w, 4);
  for (std::int64_t y = 0; y < 4; ++y)
    for (std::int64_t x = 0; x < w; ++x) ramp.at(x, y) = static_cast<double>(x) / (w - 1);
  const auto shifted = warp(ramp, FlowField(w, 4, 1.0, 0.0));
  for (std::int64_t x = 0; x + 1 < w; ++x) {
    CHECK(shifted.at(x, 2) - ramp.at(x, 2) == doctest::Approx(1.0 / (w - 1)).epsilon(1e-12));
  }

  // Warping stays inside the input range (bilinear weights are convex).
  const auto f = smooth_field(9, 7, 3.0, 0.2);
  const auto out = warp(img, f);
  const auto [lo, hi] = std::minmax_element(img.pixels().begin(), img.pixels().end());
  for (double v : out.pixels()) {
    CHECK(v >= *lo);
    CHECK(v <= *hi);
  }
  CHECK_THROWS_AS(warp(img, FlowField(8, 7)), InvalidShape);
}

TEST_CASE("warp by F then -F approximately recovers a smooth image") {
  const std::int64_t n = 64;
  const auto img = testing::blob_image(n, n);
  const auto f = smooth_field(n, n, 2.0 / std::sqrt(2.0), 0.4);
  FlowField neg(n, n);
  for (std::int64_t i = 0; i < f.size(); ++i) {
    neg.dx_plane()[i] = -f.dx_plane()[i];
    neg.dy_plane()[i] = -f.dy_plane()[i];
  }
  const auto back = warp(warp(img, f), neg);
  double mse = 0.0;
  for (std::int64_t i = 0; i < img.size(); ++i) mse += std::pow(back.pixels()[i] - img.pixels()[i], 2);
  CHECK(mse / static_cast<double>(img.size()) < 1e-3);
}

TEST_CASE("promote_field") {
  CHECK(max_diff(promote_field(FlowField(8, 6), 16, 12), FlowField(16, 12)) == 0.0);
  CHECK(max_diff(promote_field(FlowField(8, 6, 0.5, -0.25), 16, 12), FlowField(16, 12, 1.0, -0.5)) == 0.0);
  CHECK(max_diff(promote_field(FlowField(4, 3, 0.5, -0.25), 32, 24), FlowField(32, 24, 4.0, -2.0)) == 0.0);
  CHECK_THROWS_AS(promote_field(FlowField(8, 6), 20, 12), InvalidShape);
  CHECK_THROWS_AS(promote_field(FlowField(8, 6), 17, 12), InvalidShape);

  // A field linear in full-resolution position, (a x, 0), sampled at each
  // coarse pixel's centre, promotes back to (a x, 0) on interior pixels.
  const double a = 0.037;
  for (int f : {2, 4, 8}) {
    const std::int64_t cw = 6, ch = 5;
    FlowField coarse(cw, ch);
    for (std::int64_t y = 0; y < ch; ++y) {
      for (std::int64_t x = 0; x < cw; ++x) {
        const double centre = f * x + 0.5 * (f - 1);  // full-res coordinate of the block centre
        coarse.dx(x, y) = a * centre / f;             // coarse-pixel units
      }
    }
    const auto fine = promote_field(coarse, cw * f, ch * f);
    for (std::int64_t y = 0; y < ch * f; ++y) {
      for (std::int64_t x = f / 2; x < (cw - 1) * f + f / 2; ++x) {
        CHECK(fine.dx(x, y) == doctest::Approx(a * x).epsilon(1e-13));
        CHECK(fine.dy(x, y) == 0.0);
      }
    }
  }
}

TEST_CASE("compose") {
  const std::int64_t w = 20, h = 16;
  const auto f = smooth_field(w, h, 1.7, 0.1);
  const FlowField zero(w, h);
  CHECK(compose(f, zero) == f);
  CHECK(compose(zero, f) == f);
  const auto c = compose(FlowField(w, h, 1.5, -2.0), FlowField(w, h, 0.25, 0.75));
  CHECK(max_diff(c, FlowField(w, h, 1.75, -1.25)) == 0.0);

  // Associative on constant fields.
  const FlowField p(w, h, 0.5, 1.0), q(w, h, -1.25, 0.25), r(w, h, 2.0, -0.5);
  CHECK(compose(compose(p, q), r) == compose(p, compose(q, r)));
  CHECK_THROWS_AS(compose(f, FlowField(w, h + 1)), InvalidShape);
}

TEST_CASE("composed warp equals the two-stage warp on smooth images") {
  const std::int64_t n = 64;
  const auto img = testing::blob_image(n, n, 0.3);
  const auto first = smooth_field(n, n, 1.5, 0.2);
  const auto second = smooth_field(n, n, 2.0, 1.3);
  const auto two_stage = warp(warp(img, second), first);
  const auto composed = warp(img, compose(first, second));
  double mse = 0.0;
  int count = 0;
  for (std::int64_t y = 4; y < n - 4; ++y) {
    for (std::int64_t x = 4; x < n - 4; ++x) {
      mse += std::pow(two_stage.at(x, y) - composed.at(x, y), 2);
      ++count;
    }
  }
  CHECK(mse / count < 1e-4);
}

TEST_CASE("reflect padding, mask padding and cropping") {
  const Image img(3, 2, std::vector<double>{1, 2, 3, 4, 5, 6});
  const auto padded = reflect_pad(img, 5, 4);
  // Mirror without repeating the edge: columns 0 1 2 1 0, rows 0 1 0 1.
  CHECK(padded.at(3, 0) == 2);
  CHECK(padded.at(4, 0) == 1);
  CHECK(padded.at(0, 2) == 1);
  CHECK(padded.at(2, 3) == 6);
  CHECK(reflect_pad(img, 3, 2) == img);
  CHECK_THROWS_AS(reflect_pad(img, 2, 2), InvalidShape);

  const auto m = pad_mask(Mask(3, 2, true), 5, 4);
  CHECK(m.count() == 6);
  CHECK_FALSE(m.at(3, 0));

  FlowField f(5, 4, 1.0, 2.0);
  f.dx(4, 3) = 9.0;
  const auto cropped = crop(f, 3, 2);
  CHECK(cropped == FlowField(3, 2, 1.0, 2.0));
  CHECK_THROWS_AS(crop(f, 6, 2), InvalidShape);
}
