#include "sslattn/augment.hpp"

#include "sslattn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sslattn {

namespace {

using torch::indexing::Slice;

void check_image(const torch::Tensor& image, const char* where) {
  if (image.dim() != 3 || image.size(0) != 3 || image.size(1) < 1 || image.size(2) < 1) {
    throw ConfigError(std::string(where) + ": expected an image tensor [3,H,W]");
  }
}

void check_planes(const torch::Tensor& image, const char* where) {
  if (image.dim() != 3 || image.size(0) < 1 || image.size(1) < 1 || image.size(2) < 1) {
    throw ConfigError(std::string(where) + ": expected a planar tensor [C,H,W]");
  }
}

torch::Tensor blend(const torch::Tensor& a, const torch::Tensor& b, double ratio) {
  return (ratio * a + (1.0 - ratio) * b).clamp(0.0, 1.0);
}

// Source coordinates and weights along one axis for half-pixel bilinear resampling.
struct AxisWeights {
  torch::Tensor lo, hi, frac;
};

AxisWeights axis_weights(std::int64_t in, std::int64_t out, const torch::TensorOptions& opts) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  std::vector<std::int64_t> lo(out), hi(out);
  std::vector<double> frac(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    lo[o] = i0;
    hi[o] = std::min(i0 + 1, in - 1);
    frac[o] = src - static_cast<double>(i0);
  }
  return {torch::tensor(lo, torch::kLong), torch::tensor(hi, torch::kLong),
          torch::tensor(frac, torch::kFloat64).to(opts.dtype())};
}

torch::Tensor rgb_to_hsv(const torch::Tensor& img) {
  auto r = img[0], g = img[1], b = img[2];
  auto maxc = torch::max(torch::max(r, g), b);
  auto minc = torch::min(torch::min(r, g), b);
  auto eqc = maxc == minc;
  auto cr = maxc - minc;
  auto ones = torch::ones_like(maxc);
  auto s = cr / torch::where(eqc, ones, maxc);
  auto cr_div = torch::where(eqc, ones, cr);
  auto rc = (maxc - r) / cr_div;
  auto gc = (maxc - g) / cr_div;
  auto bc = (maxc - b) / cr_div;
  auto hr = (maxc == r).to(img.dtype()) * (bc - gc);
  auto hg = ((maxc == g) & (maxc != r)).to(img.dtype()) * (2.0 + rc - bc);
  auto hb = ((maxc != g) & (maxc != r)).to(img.dtype()) * (4.0 + gc - rc);
  auto h = torch::fmod((hr + hg + hb) / 6.0 + 1.0, 1.0);
  return torch::stack({h, s, maxc});
}

torch::Tensor hsv_to_rgb(const torch::Tensor& hsv) {
  auto h = hsv[0], s = hsv[1], v = hsv[2];
  auto i = torch::floor(h * 6.0);
  auto f = h * 6.0 - i;
  auto sector = torch::remainder(i.to(torch::kLong), 6);
  auto p = (v * (1.0 - s)).clamp(0.0, 1.0);
  auto q = (v * (1.0 - s * f)).clamp(0.0, 1.0);
  auto t = (v * (1.0 - s * (1.0 - f))).clamp(0.0, 1.0);
  const std::array<std::array<torch::Tensor, 6>, 3> table{{
      {v, q, p, p, t, v},
      {t, v, v, q, p, p},
      {p, p, t, v, v, q},
  }};
  std::vector<torch::Tensor> channels;
  for (const auto& row : table) {
    auto c = torch::zeros_like(v);
    for (int k = 0; k < 6; ++k) c = c + (sector == k).to(v.dtype()) * row[k];
    channels.push_back(c);
  }
  return torch::stack(channels);
}

torch::Tensor center_crop(const torch::Tensor& image, std::int64_t size) {
  const auto h = image.size(1), w = image.size(2);
  const auto top = static_cast<std::int64_t>(std::round((h - size) / 2.0));
  const auto left = static_cast<std::int64_t>(std::round((w - size) / 2.0));
  return image.index({Slice(), Slice(top, top + size), Slice(left, left + size)});
}

torch::Tensor color_jitter(const torch::Tensor& image, double strength, Rng& rng) {
  const double b = 0.8 * strength, c = 0.8 * strength, s = 0.8 * strength, h = 0.2 * strength;
  // Factor draws, then a random application order (as torchvision does).
  std::array<int, 4> order{0, 1, 2, 3};
  for (int i = 3; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  const double fb = rng.uniform(std::max(0.0, 1.0 - b), 1.0 + b);
  const double fc = rng.uniform(std::max(0.0, 1.0 - c), 1.0 + c);
  const double fs = rng.uniform(std::max(0.0, 1.0 - s), 1.0 + s);
  const double fh = rng.uniform(-h, h);
  auto out = image;
  for (int op : order) {
    switch (op) {
      case 0: if (b > 0) out = adjust_brightness(out, fb); break;
      case 1: if (c > 0) out = adjust_contrast(out, fc); break;
      case 2: if (s > 0) out = adjust_saturation(out, fs); break;
      case 3: if (h > 0) out = adjust_hue(out, fh); break;
    }
  }
  return out;
}

}  // namespace

void AugmentConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("augment: ") + name + " must lie in [0,1]");
  };
  prob(jitter_prob, "jitter_prob");
  prob(grayscale_prob, "grayscale_prob");
  prob(flip_prob, "flip_prob");
  prob(blur.prob, "blur.prob");
  if (crop_size <= 0) throw ConfigError("augment: crop_size must be > 0");
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
    throw ConfigError("augment: crop scale must satisfy 0 < min <= max <= 1");
  }
  if (jitter_strength < 0.0) throw ConfigError("augment: jitter_strength must be >= 0");
  for (double s : std) {
    if (!(s > 0.0)) throw ConfigError("augment: std entries must be > 0");
  }
  if (blur.enabled && (blur.kernel < 1 || blur.kernel % 2 == 0)) {
    throw ConfigError("augment: blur kernel must be a positive odd size");
  }
  if (blur.enabled && !(blur.sigma_min > 0.0 && blur.sigma_min <= blur.sigma_max)) {
    throw ConfigError("augment: blur sigma range must satisfy 0 < min <= max");
  }
  if (eval_resize < 0) throw ConfigError("augment: eval_resize must be >= 0");
}

AugmentConfig imagenet_config() {
  AugmentConfig cfg;
  cfg.eval_resize = 256;
  return cfg;
}

AugmentConfig cifar_config() {
  AugmentConfig cfg;
  cfg.crop_size = 32;
  cfg.jitter_strength = 0.25;
  cfg.blur.enabled = false;
  cfg.eval_resize = 0;
  return cfg;
}

torch::Tensor to_float_image(const torch::Tensor& image) {
  check_image(image, "to_float_image");
  if (image.scalar_type() == torch::kByte) return image.to(torch::kFloat32).div_(255.0);
  return image.to(torch::kFloat32);
}

torch::Tensor resize_bilinear(const torch::Tensor& image, std::int64_t out_h, std::int64_t out_w) {
  check_planes(image, "resize_bilinear");
  if (out_h < 1 || out_w < 1) throw ConfigError("resize_bilinear: output size must be positive");
  const auto in_h = image.size(1), in_w = image.size(2);
  if (in_h == out_h && in_w == out_w) return image;
  const auto ry = axis_weights(in_h, out_h, image.options());
  const auto rx = axis_weights(in_w, out_w, image.options());
  auto top = image.index_select(1, ry.lo);
  auto bottom = image.index_select(1, ry.hi);
  auto wy = ry.frac.view({1, out_h, 1});
  auto rows = top * (1.0 - wy) + bottom * wy;
  auto left = rows.index_select(2, rx.lo);
  auto right = rows.index_select(2, rx.hi);
  auto wx = rx.frac.view({1, 1, out_w});
  return left * (1.0 - wx) + right * wx;
}

CropBox sample_resized_crop(std::int64_t height, std::int64_t width, double scale_min,
                            double scale_max, Rng& rng) {
  const double area = static_cast<double>(height * width);
  const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(scale_min, scale_max);
    const double ratio = std::exp(rng.uniform(log_lo, log_hi));
    const auto w = static_cast<std::int64_t>(std::lround(std::sqrt(target * ratio)));
    const auto h = static_cast<std::int64_t>(std::lround(std::sqrt(target / ratio)));
    if (w > 0 && w <= width && h > 0 && h <= height) {
      const auto top = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(height - h + 1)));
      const auto left = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(width - w + 1)));
      return {top, left, h, w};
    }
  }
  const double in_ratio = static_cast<double>(width) / static_cast<double>(height);
  std::int64_t w = width, h = height;
  if (in_ratio < 3.0 / 4.0) {
    h = std::lround(static_cast<double>(w) / (3.0 / 4.0));
  } else if (in_ratio > 4.0 / 3.0) {
    w = std::lround(static_cast<double>(h) * (4.0 / 3.0));
  }
  return {(height - h) / 2, (width - w) / 2, h, w};
}

torch::Tensor adjust_brightness(const torch::Tensor& image, double factor) {
  return (image * factor).clamp(0.0, 1.0);
}

torch::Tensor adjust_contrast(const torch::Tensor& image, double factor) {
  auto mean = to_grayscale(image)[0].mean();
  return blend(image, mean, factor);
}

torch::Tensor adjust_saturation(const torch::Tensor& image, double factor) {
  return blend(image, to_grayscale(image), factor);
}

torch::Tensor adjust_hue(const torch::Tensor& image, double shift) {
  if (!(shift >= -0.5 && shift <= 0.5)) throw ConfigError("adjust_hue: shift must lie in [-0.5, 0.5]");
  auto hsv = rgb_to_hsv(image);
  auto h = torch::remainder(hsv[0] + shift, 1.0);
  return hsv_to_rgb(torch::stack({h, hsv[1], hsv[2]}));
}

torch::Tensor to_grayscale(const torch::Tensor& image) {
  check_image(image, "to_grayscale");
  auto l = (0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]).unsqueeze(0);
  return l.expand({3, -1, -1}).contiguous();
}

torch::Tensor gaussian_blur(const torch::Tensor& image, std::int64_t kernel, double sigma) {
  check_image(image, "gaussian_blur");
  // Reflect padding needs pad < size; shrink the kernel on tiny images.
  const auto max_kernel = 2 * (std::min(image.size(1), image.size(2)) - 1) + 1;
  kernel = std::min(kernel, max_kernel);
  if (kernel <= 1) return image;
  const auto half = kernel / 2;
  auto x = torch::linspace(-static_cast<double>(half), static_cast<double>(half), kernel,
                           image.options());
  auto k1d = torch::exp(-0.5 * (x / sigma).pow(2));
  k1d = k1d / k1d.sum();
  namespace F = torch::nn::functional;
  auto batch = image.unsqueeze(0);
  batch = F::pad(batch, F::PadFuncOptions({half, half, half, half}).mode(torch::kReflect));
  auto kx = k1d.view({1, 1, 1, kernel}).expand({3, 1, 1, kernel});
  auto ky = k1d.view({1, 1, kernel, 1}).expand({3, 1, kernel, 1});
  batch = F::conv2d(batch, kx, F::Conv2dFuncOptions().groups(3));
  batch = F::conv2d(batch, ky, F::Conv2dFuncOptions().groups(3));
  return batch.squeeze(0);
}

torch::Tensor normalize(const torch::Tensor& image, const AugmentConfig& cfg) {
  auto mean = torch::tensor({cfg.mean[0], cfg.mean[1], cfg.mean[2]}, torch::kFloat64)
                  .to(image.dtype())
                  .view({3, 1, 1});
  auto std = torch::tensor({cfg.std[0], cfg.std[1], cfg.std[2]}, torch::kFloat64)
                 .to(image.dtype())
                 .view({3, 1, 1});
  return (image - mean) / std;
}

torch::Tensor make_positive_view(const torch::Tensor& image, const AugmentConfig& cfg, Rng& rng) {
  auto img = to_float_image(image);
  const auto box = sample_resized_crop(img.size(1), img.size(2), cfg.crop_scale_min,
                                       cfg.crop_scale_max, rng);
  img = img.index({Slice(), Slice(box.top, box.top + box.height), Slice(box.left, box.left + box.width)});
  img = resize_bilinear(img, cfg.crop_size, cfg.crop_size);
  if (rng.bernoulli(cfg.flip_prob)) img = img.flip({2});
  if (rng.bernoulli(cfg.jitter_prob)) img = color_jitter(img, cfg.jitter_strength, rng);
  if (rng.bernoulli(cfg.grayscale_prob)) img = to_grayscale(img);
  if (cfg.blur.enabled && rng.bernoulli(cfg.blur.prob)) {
    img = gaussian_blur(img, cfg.blur.kernel, rng.uniform(cfg.blur.sigma_min, cfg.blur.sigma_max));
  }
  return normalize(img, cfg).contiguous();
}

std::pair<torch::Tensor, torch::Tensor> make_views(const torch::Tensor& image, const AugmentConfig& cfg,
                                                   Rng& rng) {
  auto first = make_positive_view(image, cfg, rng);
  auto second = make_positive_view(image, cfg, rng);
  return {first, second};
}

torch::Tensor eval_crop(const torch::Tensor& image, const AugmentConfig& cfg) {
  auto img = to_float_image(image);
  const auto target = cfg.eval_resize > 0 ? cfg.eval_resize : cfg.crop_size;
  const auto h = img.size(1), w = img.size(2);
  std::int64_t new_h = target, new_w = target;
  if (h <= w) {
    new_w = static_cast<std::int64_t>(static_cast<double>(target) * w / h);
  } else {
    new_h = static_cast<std::int64_t>(static_cast<double>(target) * h / w);
  }
  img = resize_bilinear(img, new_h, new_w);
  if (new_h < cfg.crop_size || new_w < cfg.crop_size) {
    img = resize_bilinear(img, std::max(new_h, cfg.crop_size), std::max(new_w, cfg.crop_size));
  }
  return center_crop(img, cfg.crop_size).contiguous();
}

torch::Tensor make_eval_view(const torch::Tensor& image, const AugmentConfig& cfg) {
  return normalize(eval_crop(image, cfg), cfg).contiguous();
}

}  // namespace sslattn
