#pragma once

#include "geoclr/image.hpp"
#include "geoclr/rng.hpp"

namespace geoclr {

/// Perturbation family applied independently to each view of a pair.
/// Every stage can be disabled: crop by a fixed scale of 1, the others by a
/// zero probability or strength. Crop and flip are off by default: the
/// default encoder is fully connected and has no spatial invariance.
struct AugmentConfig {
  /// Random square crop, side drawn uniformly from this fraction range of the
  /// image side, resized back bilinearly.
  double crop_scale_min = 1.0;
  double crop_scale_max = 1.0;
  double flip_prob = 0.0;
  double jitter_prob = 0.8;
  /// Additive brightness delta drawn from [-b, b].
  double brightness = 0.2;
  /// Contrast and saturation factors drawn from [1 - s, 1 + s].
  double contrast = 0.2;
  double saturation = 0.2;
  double grayscale_prob = 0.2;

  void validate() const;

  /// Configuration under which augment() is the identity.
  static AugmentConfig identity();
};

/// Applies crop, flip, color jitter and grayscale in that order. Output has
/// the input's shape and is clipped to [0, 1].
///
/// Draw order (relevant for reproducing a draw in tests): crop draws side
/// then x, y offsets if enabled; flip draws one uniform if flip_prob > 0;
/// jitter draws one uniform if jitter_prob > 0, and when applied draws
/// brightness, contrast, saturation deltas in that order, each only if its
/// strength is positive; grayscale draws one uniform if grayscale_prob > 0.
Image augment(const Image& image, const AugmentConfig& cfg, Rng& rng);

Image flip_horizontal(const Image& image);

}  // namespace geoclr
