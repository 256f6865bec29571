#pragma once

#include "logoid/dataio.hpp"
#include "logoid/image.hpp"
#include "logoid/rng.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace logoid {

struct RandomResizedCropParams {
  /// When false the whole image is resized to size x size.
  bool enabled = true;
  int size = 224;
  double scale_min = 0.08;
  double scale_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
};

struct ColorJitterParams {
  double p = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
};

/// Ordered stochastic transform chain: random-resized-crop, horizontal
/// flip, color jitter, grayscale, gaussian blur, solarization.
struct AugmentationPolicy {
  RandomResizedCropParams crop;
  double flip_p = 0.5;
  ColorJitterParams jitter;
  double grayscale_p = 0.2;
  double blur_p = 0.0;
  /// Blur sigma range in pixels at a 224-pixel output; scaled with crop.size.
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  double solarize_p = 0.0;
  double solarize_threshold = 0.5;
  /// Inputs with a side shorter than this are rejected.
  int min_input_side = 8;
  std::string rng_algorithm = Rng::kAlgorithm;

  /// Throws std::invalid_argument on out-of-range probabilities or sizes.
  void validate() const;

  /// Asymmetric defaults: view a always blurs, view b may solarize.
  static AugmentationPolicy default_a(int size = 224);
  static AugmentationPolicy default_b(int size = 224);
  /// Every probability zero, whole image resized to size x size.
  static AugmentationPolicy identity(int size = 224);
};

struct ViewBatch {
  std::vector<Image> view_a;
  std::vector<Image> view_b;
  std::vector<BrandId> labels;
};

/// Applies one policy to one image. Output is 3 x S x S with values in [0, 1].
Image augment(const Image& image, const AugmentationPolicy& policy, Rng& rng);

/// Two independent distortions of every image. Image i under view v draws
/// from its own stream seeded by (seed, i, v), so results do not depend on
/// processing order.
ViewBatch two_views(std::span<const Image> images, std::span<const BrandId> labels,
                    const AugmentationPolicy& policy_a, const AugmentationPolicy& policy_b,
                    std::uint64_t seed);

}  // namespace logoid
