#pragma once

#include <cstdint>
#include <utility>

#include "json.hpp"
#include "lesion/tensor.hpp"

namespace lesion {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Training-time augmentation ranges. Geometric ops use reflect padding.
struct AugmentConfig {
  Interval rotation_degrees{-25.0, 25.0};
  Interval shear_degrees{-10.0, 10.0};
  Interval zoom_factor{0.9, 1.1};
  Interval brightness_delta{-0.1, 0.1};
  double horizontal_flip = 0.5;
  double vertical_flip = 0.5;
  std::uint64_t seed = 0;
  // Clip range of the image values; follows the normalization policy.
  double value_lower = 0.0;
  double value_upper = 1.0;

  /// Every op disabled.
  static AugmentConfig identity();
  void validate() const;
};

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

/// One concrete draw from an AugmentConfig.
struct AugmentParams {
  double rotation_degrees = 0.0;
  double shear_degrees = 0.0;
  double zoom = 1.0;
  double brightness = 0.0;
  bool horizontal_flip = false;
  bool vertical_flip = false;
};

/// Seed for one sample: a pure function of (global seed, epoch, sample index).
std::uint64_t augment_sample_seed(std::uint64_t global_seed, std::uint64_t epoch, std::uint64_t index);

/// Draws do not depend on image content, so paired image/mask calls agree.
AugmentParams draw_augment_params(const AugmentConfig& config, std::uint64_t sample_seed);

/// Affine (rotation, shear, zoom about the image centre) followed by flips.
/// Positive rotation turns content counter-clockwise as displayed. Masks are
/// re-binarized at 0.5 after bilinear resampling.
Tensor apply_geometry(const Tensor& image, const AugmentParams& params, bool is_mask);

std::pair<Tensor, Tensor> augment_pair(const Tensor& image, const Tensor& mask,
                                       const AugmentConfig& config, std::uint64_t sample_seed);
Tensor augment_image(const Tensor& image, const AugmentConfig& config, std::uint64_t sample_seed);

}  // namespace lesion
