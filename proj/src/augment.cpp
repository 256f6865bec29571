#include "logoid/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

namespace logoid {

namespace {

void require_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument(fmt::format("augmentation: {} = {} not in [0,1]", name, p));
  }
}

Image random_resized_crop(const Image& img, const RandomResizedCropParams& p, Rng& rng) {
  const int H = img.height();
  const int W = img.width();
  if (!p.enabled) return resize(img, p.size, p.size);

  const double area = static_cast<double>(H) * W;
  const double log_rmin = std::log(p.ratio_min);
  const double log_rmax = std::log(p.ratio_max);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(p.scale_min, p.scale_max);
    const double ratio = std::exp(rng.uniform(log_rmin, log_rmax));
    const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w > 0 && h > 0 && w <= W && h <= H) {
      const int y = static_cast<int>(rng.index(static_cast<std::size_t>(H - h + 1)));
      const int x = static_cast<int>(rng.index(static_cast<std::size_t>(W - w + 1)));
      return resize_region(img, x, y, w, h, p.size, p.size);
    }
  }
  // Fallback: centered crop with the aspect ratio clamped into range.
  const double in_ratio = static_cast<double>(W) / H;
  int w = W, h = H;
  if (in_ratio < p.ratio_min) {
    h = static_cast<int>(std::lround(W / p.ratio_min));
  } else if (in_ratio > p.ratio_max) {
    w = static_cast<int>(std::lround(H * p.ratio_max));
  }
  return resize_region(img, (W - w) / 2, (H - h) / 2, w, h, p.size, p.size);
}

void hflip(Image& img) {
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0, xr = img.width() - 1; x < xr; ++x, --xr) {
        std::swap(img.at(c, y, x), img.at(c, y, xr));
      }
    }
  }
}

float luma(const Image& img, int y, int x) {
  return 0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) + 0.114f * img.at(2, y, x);
}

void clamp01(Image& img) {
  for (float& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
}

void adjust_brightness(Image& img, float factor) {
  for (float& v : img.data()) v *= factor;
  clamp01(img);
}

void adjust_contrast(Image& img, float factor) {
  double mean = 0.0;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) mean += luma(img, y, x);
  }
  const float m = static_cast<float>(mean / (static_cast<double>(img.height()) * img.width()));
  for (float& v : img.data()) v = (v - m) * factor + m;
  clamp01(img);
}

void adjust_saturation(Image& img, float factor) {
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const float g = luma(img, y, x);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = (img.at(c, y, x) - g) * factor + g;
    }
  }
  clamp01(img);
}

/// Rotates hue by `shift` turns (shift in [-0.5, 0.5]).
void adjust_hue(Image& img, float shift) {
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const float r = img.at(0, y, x), g = img.at(1, y, x), b = img.at(2, y, x);
      const float maxc = std::max({r, g, b});
      const float minc = std::min({r, g, b});
      const float v = maxc;
      const float delta = maxc - minc;
      if (delta <= 0.0f) continue;
      const float s = delta / maxc;
      float h;
      if (maxc == r) {
        h = (g - b) / delta;
      } else if (maxc == g) {
        h = 2.0f + (b - r) / delta;
      } else {
        h = 4.0f + (r - g) / delta;
      }
      h = h / 6.0f + shift;
      h -= std::floor(h);
      const float h6 = h * 6.0f;
      const int sector = static_cast<int>(std::floor(h6)) % 6;
      const float f = h6 - std::floor(h6);
      const float p = v * (1.0f - s);
      const float q = v * (1.0f - s * f);
      const float t = v * (1.0f - s * (1.0f - f));
      std::array<float, 3> rgb;
      switch (sector) {
        case 0: rgb = {v, t, p}; break;
        case 1: rgb = {q, v, p}; break;
        case 2: rgb = {p, v, t}; break;
        case 3: rgb = {p, q, v}; break;
        case 4: rgb = {t, p, v}; break;
        default: rgb = {v, p, q}; break;
      }
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
    }
  }
  clamp01(img);
}

void color_jitter(Image& img, const ColorJitterParams& p, Rng& rng) {
  std::array<int, 4> order{0, 1, 2, 3};
  rng.shuffle(std::span<int>(order));
  for (int op : order) {
    switch (op) {
      case 0:
        if (p.brightness > 0) {
          adjust_brightness(img, static_cast<float>(rng.uniform(std::max(0.0, 1 - p.brightness),
                                                                1 + p.brightness)));
        }
        break;
      case 1:
        if (p.contrast > 0) {
          adjust_contrast(img, static_cast<float>(rng.uniform(std::max(0.0, 1 - p.contrast),
                                                              1 + p.contrast)));
        }
        break;
      case 2:
        if (p.saturation > 0) {
          adjust_saturation(img, static_cast<float>(rng.uniform(
                                     std::max(0.0, 1 - p.saturation), 1 + p.saturation)));
        }
        break;
      default:
        if (p.hue > 0) adjust_hue(img, static_cast<float>(rng.uniform(-p.hue, p.hue)));
        break;
    }
  }
}

void grayscale(Image& img) {
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const float g = luma(img, y, x);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = g;
    }
  }
}

int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

void gaussian_blur(Image& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    const double w = std::exp(-0.5 * k * k / (sigma * sigma));
    kernel[k + radius] = static_cast<float>(w);
    total += w;
  }
  for (float& w : kernel) w = static_cast<float>(w / total);

  const int H = img.height(), W = img.width();
  std::vector<float> tmp(static_cast<std::size_t>(H) * W);
  for (int c = 0; c < img.channels(); ++c) {
    auto plane = img.plane(c);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * plane[y * W + reflect101(x + k, W)];
        }
        tmp[y * W + x] = acc;
      }
    }
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * tmp[reflect101(y + k, H) * W + x];
        }
        plane[y * W + x] = acc;
      }
    }
  }
  clamp01(img);
}

void solarize(Image& img, double threshold) {
  const float t = static_cast<float>(threshold);
  for (float& v : img.data()) {
    if (v >= t) v = 1.0f - v;
  }
}

}  // namespace

void AugmentationPolicy::validate() const {
  require_probability(flip_p, "flip_p");
  require_probability(jitter.p, "jitter.p");
  require_probability(grayscale_p, "grayscale_p");
  require_probability(blur_p, "blur_p");
  require_probability(solarize_p, "solarize_p");
  if (crop.size < 1) throw std::invalid_argument("augmentation: crop size must be >= 1");
  if (!(crop.scale_min > 0 && crop.scale_min <= crop.scale_max && crop.scale_max <= 1.0)) {
    throw std::invalid_argument("augmentation: need 0 < scale_min <= scale_max <= 1");
  }
  if (!(crop.ratio_min > 0 && crop.ratio_min <= crop.ratio_max)) {
    throw std::invalid_argument("augmentation: need 0 < ratio_min <= ratio_max");
  }
  if (!(blur_sigma_min > 0 && blur_sigma_min <= blur_sigma_max)) {
    throw std::invalid_argument("augmentation: need 0 < blur_sigma_min <= blur_sigma_max");
  }
  if (jitter.brightness < 0 || jitter.contrast < 0 || jitter.saturation < 0 || jitter.hue < 0 ||
      jitter.hue > 0.5) {
    throw std::invalid_argument("augmentation: jitter strengths must be >= 0, hue <= 0.5");
  }
  if (rng_algorithm != Rng::kAlgorithm) {
    throw std::invalid_argument(
        fmt::format("augmentation: unsupported rng algorithm '{}'", rng_algorithm));
  }
}

AugmentationPolicy AugmentationPolicy::default_a(int size) {
  AugmentationPolicy p;
  p.crop.size = size;
  p.blur_p = 1.0;
  p.solarize_p = 0.0;
  return p;
}

AugmentationPolicy AugmentationPolicy::default_b(int size) {
  AugmentationPolicy p;
  p.crop.size = size;
  p.blur_p = 0.1;
  p.solarize_p = 0.2;
  return p;
}

AugmentationPolicy AugmentationPolicy::identity(int size) {
  AugmentationPolicy p;
  p.crop.enabled = false;
  p.crop.size = size;
  p.flip_p = 0.0;
  p.jitter.p = 0.0;
  p.grayscale_p = 0.0;
  p.blur_p = 0.0;
  p.solarize_p = 0.0;
  return p;
}

Image augment(const Image& image, const AugmentationPolicy& policy, Rng& rng) {
  policy.validate();
  if (image.channels() != 3) throw std::invalid_argument("augment: expected a 3-channel image");
  if (image.height() < policy.min_input_side || image.width() < policy.min_input_side) {
    throw std::invalid_argument(fmt::format("augment: image {}x{} smaller than minimum side {}",
                                            image.width(), image.height(),
                                            policy.min_input_side));
  }
  Image out = random_resized_crop(image, policy.crop, rng);
  if (rng.bernoulli(policy.flip_p)) hflip(out);
  if (rng.bernoulli(policy.jitter.p)) color_jitter(out, policy.jitter, rng);
  if (rng.bernoulli(policy.grayscale_p)) grayscale(out);
  if (rng.bernoulli(policy.blur_p)) {
    const double scale = policy.crop.size / 224.0;
    gaussian_blur(out, rng.uniform(policy.blur_sigma_min, policy.blur_sigma_max) * scale);
  }
  if (rng.bernoulli(policy.solarize_p)) solarize(out, policy.solarize_threshold);
  clamp01(out);
  return out;
}

ViewBatch two_views(std::span<const Image> images, std::span<const BrandId> labels,
                    const AugmentationPolicy& policy_a, const AugmentationPolicy& policy_b,
                    std::uint64_t seed) {
  if (images.empty()) throw std::invalid_argument("two_views: empty batch");
  if (labels.size() != images.size()) {
    throw std::invalid_argument("two_views: labels and images differ in length");
  }
  ViewBatch out;
  out.view_a.reserve(images.size());
  out.view_b.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    Rng rng_a(derive_seed({seed, i, 0}));
    Rng rng_b(derive_seed({seed, i, 1}));
    out.view_a.push_back(augment(images[i], policy_a, rng_a));
    out.view_b.push_back(augment(images[i], policy_b, rng_b));
  }
  out.labels.assign(labels.begin(), labels.end());
  return out;
}

}  // namespace logoid
