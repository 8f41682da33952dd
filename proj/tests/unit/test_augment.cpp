#include "doctest.h"
#include "test_util.hpp"

#include "sslattn/augment.hpp"
#include "sslattn/errors.hpp"

#include <cmath>

using namespace sslattn;

namespace {

AugmentConfig degenerate(std::int64_t size) {
  auto c = cifar_config();
  c.crop_size = size;
  c.crop_scale_min = c.crop_scale_max = 1.0;
  c.flip_prob = c.jitter_prob = c.grayscale_prob = 0.0;
  c.blur.prob = 0.0;
  return c;
}

// Half-pixel bilinear on one plane, edge-clamped.
double bilinear_oracle(const torch::Tensor& plane, double y, double x) {
  const auto h = plane.size(0), w = plane.size(1);
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<int64_t>(std::floor(y)), x0 = static_cast<int64_t>(std::floor(x));
  const auto y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double dy = y - y0, dx = x - x0;
  auto v = [&](int64_t a, int64_t b) { return plane[a][b].item<double>(); };
  return (1 - dy) * ((1 - dx) * v(y0, x0) + dx * v(y0, x1)) + dy * ((1 - dx) * v(y1, x0) + dx * v(y1, x1));
}

}  // namespace

TEST_CASE("presets") {
  auto c = cifar_config();
  CHECK_FALSE(c.blur.enabled);
  CHECK(c.jitter_strength == 0.25);
  CHECK(c.crop_size == 32);
  auto i = imagenet_config();
  CHECK(i.crop_size == 224);
  CHECK(i.blur.kernel == 23);
  CHECK(i.blur.prob == 0.5);
  CHECK(i.jitter_prob == 0.8);
  CHECK(i.grayscale_prob == 0.2);
  CHECK(i.std[0] == 0.228);
}

TEST_CASE("bilinear resize of a 4x4 ramp") {
  auto ramp = torch::arange(16, torch::kFloat32).view({1, 4, 4}) / 15.0;
  for (auto [oh, ow] : {std::pair<int64_t, int64_t>{2, 2}, {8, 8}, {3, 5}}) {
    auto r = resize_bilinear(ramp, oh, ow);
    CHECK(r.sizes().equals({1, oh, ow}));
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        const double sy = (i + 0.5) * 4.0 / oh - 0.5, sx = (j + 0.5) * 4.0 / ow - 0.5;
        CHECK(std::abs(r[0][i][j].item<double>() - bilinear_oracle(ramp[0], sy, sx)) <= 1e-6);
      }
  }
  // hand weights: 4 -> 2 samples source 0.5 and 2.5
  auto row = torch::tensor({0.0f, 1.0f, 2.0f, 3.0f}).view({1, 1, 4});
  auto half = resize_bilinear(row, 1, 2);
  CHECK(half[0][0][0].item<float>() == doctest::Approx(0.5));
  CHECK(half[0][0][1].item<float>() == doctest::Approx(2.5));
}

TEST_CASE("normalize uses the configured mean and std") {
  auto c = imagenet_config();
  auto img = torch::full({3, 2, 2}, 0.485f);
  CHECK(std::abs(normalize(img, c)[0][0][0].item<double>()) <= 1e-6);
  auto zero = make_positive_view(torch::zeros({3, 32, 32}, torch::kUInt8), degenerate(32), *std::make_unique<Rng>(1));
  for (int ch = 0; ch < 3; ++ch) {
    CHECK(testutil::max_abs_diff(zero[ch], torch::full({32, 32}, -c.mean[ch] / c.std[ch])) <= 1e-5);
  }
}

TEST_CASE("degenerate pipeline equals the eval view") {
  auto img = make_synthetic_dataset(1, 10, 32, 5)->image(0);
  auto cfg = degenerate(16);
  Rng rng(4);
  auto [s, t] = make_views(img, cfg, rng);
  auto e = make_eval_view(img, cfg);
  CHECK(testutil::max_abs_diff(s, e) <= 1e-6);
  CHECK(testutil::max_abs_diff(t, e) <= 1e-6);
}

TEST_CASE("views are seeded, shaped and finite") {
  auto img = make_synthetic_dataset(1, 10, 48, 6)->image(0);
  auto cfg = imagenet_config();
  cfg.crop_size = 24;
  cfg.blur.kernel = 5;
  Rng a(10), b(10);
  auto va = make_views(img, cfg, a);
  auto vb = make_views(img, cfg, b);
  CHECK(torch::equal(va.first, vb.first));
  CHECK(torch::equal(va.second, vb.second));
  CHECK_FALSE(torch::equal(va.first, va.second));
  CHECK(va.first.sizes().equals({3, 24, 24}));
  CHECK(torch::isfinite(va.first).all().item<bool>());
  Rng c(10);
  CHECK(torch::equal(make_positive_view(img, cfg, c), make_positive_view(img, cfg, *std::make_unique<Rng>(10))));
  auto cifar = cifar_config();
  Rng d(1);
  CHECK(make_positive_view(make_synthetic_dataset(1, 10, 32, 1)->image(0), cifar, d).sizes().equals({3, 32, 32}));
}

TEST_CASE("default imagenet view is 224") {
  auto img = torch::randint(0, 255, {3, 64, 80}, torch::kUInt8);
  Rng r(2);
  CHECK(make_positive_view(img, imagenet_config(), r).sizes().equals({3, 224, 224}));
}

TEST_CASE("eval view: deterministic, square input is a plain resize") {
  auto img = torch::rand({3, 20, 20});
  auto cfg = degenerate(10);
  CHECK(torch::equal(make_eval_view(img, cfg), make_eval_view(img, cfg)));
  CHECK(testutil::max_abs_diff(eval_crop(img, cfg), resize_bilinear(img, 10, 10)) == 0.0);
  auto wide = eval_crop(torch::rand({3, 10, 30}), cfg);
  CHECK(wide.sizes().equals({3, 10, 10}));
}

TEST_CASE("resized crop boxes stay inside the image") {
  Rng r(3);
  for (int t = 0; t < 500; ++t) {
    auto box = sample_resized_crop(40, 60, 0.14, 1.0, r);
    CHECK(box.top >= 0);
    CHECK(box.left >= 0);
    CHECK(box.height >= 1);
    CHECK(box.top + box.height <= 40);
    CHECK(box.left + box.width <= 60);
  }
  auto full = sample_resized_crop(30, 30, 1.0, 1.0, r);
  CHECK(full.height == 30);
  CHECK(full.width == 30);
}

TEST_CASE("color ops") {
  auto img = torch::rand({3, 5, 5});
  CHECK(testutil::max_abs_diff(adjust_brightness(img, 1.0), img) <= 1e-7);
  CHECK(testutil::max_abs_diff(adjust_contrast(img, 1.0), img) <= 1e-6);
  CHECK(testutil::max_abs_diff(adjust_saturation(img, 1.0), img) <= 1e-6);
  CHECK(testutil::max_abs_diff(adjust_hue(img, 0.0), img) <= 1e-5);
  auto g = to_grayscale(img);
  CHECK(g.sizes().equals({3, 5, 5}));
  CHECK(torch::equal(g[0], g[1]));
  CHECK(torch::equal(g[1], g[2]));
  auto gray = adjust_saturation(img, 0.0);
  CHECK(testutil::max_abs_diff(gray, g) <= 1e-6);
  CHECK(adjust_brightness(img, 3.0).max().item<double>() <= 1.0);
}

TEST_CASE("gaussian blur keeps constants and mass") {
  auto flat = torch::full({3, 9, 9}, 0.3f);
  CHECK(testutil::max_abs_diff(gaussian_blur(flat, 5, 1.0), flat) <= 1e-6);
  auto spike = torch::zeros({3, 11, 11});
  spike[0][5][5] = 1.0;
  auto b = gaussian_blur(spike, 5, 1.0);
  CHECK(b.sum().item<double>() == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(b[1].abs().max().item<double>() == 0.0);
  CHECK(b[0][5][5].item<double>() < 1.0);
}

TEST_CASE("bad knobs are config errors") {
  auto c = cifar_config();
  c.flip_prob = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = cifar_config();
  c.std[1] = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = cifar_config();
  c.crop_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
