#pragma once

// View generation. Images enter as float tensors [3,H,W] with values in
// [0,1] (see to_float_image) and leave normalised with the configured
// mean/std.

#include "sslattn/rng.hpp"

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <utility>

namespace sslattn {

struct BlurConfig {
  bool enabled = true;
  std::int64_t kernel = 23;
  double sigma_min = 0.1;
  double sigma_max = 2.0;
  double prob = 0.5;
};

struct AugmentConfig {
  std::int64_t crop_size = 224;
  double crop_scale_min = 0.14;
  double crop_scale_max = 1.0;
  double jitter_strength = 1.0;
  double jitter_prob = 0.8;
  double grayscale_prob = 0.2;
  BlurConfig blur;
  double flip_prob = 0.5;
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.228, 0.224, 0.225};
  // Shorter side is resized to this before the eval center crop; 0 means crop_size.
  std::int64_t eval_resize = 0;

  // Throws ConfigError on out-of-range knobs.
  void validate() const;
};

AugmentConfig imagenet_config();
// No blur, jitter strength 1/4, 32x32 crops.
AugmentConfig cifar_config();

// uint8 [3,H,W] (or already-float) -> float32 [3,H,W] in [0,1].
torch::Tensor to_float_image(const torch::Tensor& image);

// Bilinear resize of [C,H,W] with half-pixel centers (align_corners = false), no antialias.
torch::Tensor resize_bilinear(const torch::Tensor& image, std::int64_t out_h, std::int64_t out_w);

struct CropBox {
  std::int64_t top = 0, left = 0, height = 0, width = 0;
};

// Area fraction in [scale_min, scale_max], log-uniform aspect ratio in
// [3/4, 4/3], ten attempts then a ratio-clamped center crop.
CropBox sample_resized_crop(std::int64_t height, std::int64_t width, double scale_min,
                            double scale_max, Rng& rng);

torch::Tensor adjust_brightness(const torch::Tensor& image, double factor);
torch::Tensor adjust_contrast(const torch::Tensor& image, double factor);
torch::Tensor adjust_saturation(const torch::Tensor& image, double factor);
// Hue shift in turns, |shift| <= 0.5.
torch::Tensor adjust_hue(const torch::Tensor& image, double shift);
torch::Tensor to_grayscale(const torch::Tensor& image);
torch::Tensor gaussian_blur(const torch::Tensor& image, std::int64_t kernel, double sigma);
torch::Tensor normalize(const torch::Tensor& image, const AugmentConfig& cfg);

// One draw of the stochastic pipeline:
// resized crop -> flip -> color jitter -> grayscale -> blur -> normalize.
torch::Tensor make_positive_view(const torch::Tensor& image, const AugmentConfig& cfg, Rng& rng);

// Two independent draws (source and target views).
std::pair<torch::Tensor, torch::Tensor> make_views(const torch::Tensor& image,
                                                   const AugmentConfig& cfg, Rng& rng);

// Deterministic resize (shorter side) -> center crop, still in [0,1].
torch::Tensor eval_crop(const torch::Tensor& image, const AugmentConfig& cfg);

// Deterministic resize (shorter side) -> center crop -> normalize.
torch::Tensor make_eval_view(const torch::Tensor& image, const AugmentConfig& cfg);

}  // namespace sslattn
