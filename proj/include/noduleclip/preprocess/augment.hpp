#pragma once

#include <array>

#include "noduleclip/common/random.hpp"
#include "noduleclip/preprocess/preprocess.hpp"

namespace noduleclip::preprocess {

struct AugmentationConfig {
  double jitter_mm = 5.0;
  double flip_prob = 0.5;
  double max_rotation_deg = 10.0;
  double noise_mean = 0.0;
  double noise_std = 0.02;
  std::array<double, 2> contrast_exponent_range{-0.02, 0.02};

  void validate() const;
  // Every magnitude zero; augment() then reproduces the deterministic path.
  static AugmentationConfig none();
};

struct AugmentedCrop {
  Vec3 centroid_mm{};
  NoduleCrop crop;  // [0, 1] intensities
};

// Training-time augmentation, in this order: centroid jitter, crop, per-axis
// flips, rotation about a random axis (trilinear, -1000 HU fill), HU clip and
// normalise, additive Gaussian noise, contrast power v^(1+e), clamp to [0, 1].
// Randomness comes only from `rng`.
AugmentedCrop augment(const Volume& volume_1mm, const Vec3& centroid_mm, const AugmentationConfig& config, Rng& rng);

}  // namespace noduleclip::preprocess
