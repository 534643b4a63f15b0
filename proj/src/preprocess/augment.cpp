#include "noduleclip/preprocess/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "noduleclip/common/error.hpp"

namespace noduleclip::preprocess {
namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 rotation_matrix(const Vec3& axis, double angle_rad) {
  const double c = std::cos(angle_rad), s = std::sin(angle_rad), t = 1.0 - c;
  const auto [x, y, z] = axis;
  return {{{t * x * x + c, t * x * y - s * z, t * x * z + s * y},
           {t * x * y + s * z, t * y * y + c, t * y * z - s * x},
           {t * x * z - s * y, t * y * z + s * x, t * z * z + c}}};
}

void flip_axis(NoduleCrop& crop, int axis) {
  NoduleCrop out;
  for (int z = 0; z < kCropSize; ++z) {
    for (int y = 0; y < kCropSize; ++y) {
      for (int x = 0; x < kCropSize; ++x) {
        int s[3] = {x, y, z};
        s[axis] = kCropSize - 1 - s[axis];
        const auto src = NoduleCrop::index(s[0], s[1], s[2]);
        const auto dst = NoduleCrop::index(x, y, z);
        out.voxels[dst] = crop.voxels[src];
        out.pad_mask[dst] = crop.pad_mask[src];
      }
    }
  }
  crop = std::move(out);
}

// Rotates about the crop centre voxel. Samples falling outside the crop take
// the pad value and are flagged in the mask.
NoduleCrop rotate(const NoduleCrop& crop, const Mat3& rot) {
  NoduleCrop out;
  const double c = kCropCenter;
  auto voxel = [&](int x, int y, int z, double& value, bool& padded) {
    if (x < 0 || y < 0 || z < 0 || x >= kCropSize || y >= kCropSize || z >= kCropSize) {
      value = kPadHu;
      padded = true;
      return;
    }
    const auto i = NoduleCrop::index(x, y, z);
    value = crop.voxels[i];
    padded = crop.pad_mask[i] != 0;
  };
  for (int z = 0; z < kCropSize; ++z) {
    for (int y = 0; y < kCropSize; ++y) {
      for (int x = 0; x < kCropSize; ++x) {
        const double d[3] = {x - c, y - c, z - c};
        // inverse rotation = transpose
        double p[3];
        for (int a = 0; a < 3; ++a) p[a] = c + rot[0][a] * d[0] + rot[1][a] * d[1] + rot[2][a] * d[2];
        int i0[3];
        double t[3];
        for (int a = 0; a < 3; ++a) {
          i0[a] = static_cast<int>(std::floor(p[a]));
          t[a] = p[a] - i0[a];
        }
        double acc = 0.0, weight_padded = 0.0;
        for (int corner = 0; corner < 8; ++corner) {
          const int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
          const double w = (dx ? t[0] : 1 - t[0]) * (dy ? t[1] : 1 - t[1]) * (dz ? t[2] : 1 - t[2]);
          double v;
          bool padded;
          voxel(i0[0] + dx, i0[1] + dy, i0[2] + dz, v, padded);
          acc += w * v;
          if (padded) weight_padded += w;
        }
        const auto dst = NoduleCrop::index(x, y, z);
        out.voxels[dst] = static_cast<float>(acc);
        out.pad_mask[dst] = weight_padded >= 0.5 ? 1 : 0;
      }
    }
  }
  return out;
}

Vec3 clamp_into(const Volume& v, const Vec3& mm) {
  Vec3 out = mm;
  for (int a = 0; a < 3; ++a) {
    const double lo = v.origin_mm[a];
    const double hi = v.origin_mm[a] + (v.dims[a] - 1) * v.spacing_mm[a];
    out[a] = std::clamp(out[a], lo, hi);
  }
  return out;
}

}  // namespace

void AugmentationConfig::validate() const {
  if (!(jitter_mm >= 0.0)) throw ValidationError("augmentation jitter_mm must be >= 0");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ValidationError("augmentation flip_prob must lie in [0, 1]");
  if (!(max_rotation_deg >= 0.0)) throw ValidationError("augmentation max_rotation_deg must be >= 0");
  if (!(noise_std >= 0.0)) throw ValidationError("augmentation noise_std must be >= 0");
  if (!(contrast_exponent_range[0] <= contrast_exponent_range[1])) {
    throw ValidationError("augmentation contrast_exponent_range must be an ordered interval");
  }
}

AugmentationConfig AugmentationConfig::none() {
  AugmentationConfig c;
  c.jitter_mm = 0.0;
  c.flip_prob = 0.0;
  c.max_rotation_deg = 0.0;
  c.noise_mean = 0.0;
  c.noise_std = 0.0;
  c.contrast_exponent_range = {0.0, 0.0};
  return c;
}

AugmentedCrop augment(const Volume& volume, const Vec3& centroid_mm, const AugmentationConfig& config, Rng& rng) {
  config.validate();
  AugmentedCrop out;
  Vec3 jittered = centroid_mm;
  if (config.jitter_mm > 0.0) {
    for (int a = 0; a < 3; ++a) jittered[a] += rng.uniform(-config.jitter_mm, config.jitter_mm);
    jittered = clamp_into(volume, jittered);
  }
  out.centroid_mm = jittered;
  NoduleCrop crop = crop_nodule(volume, jittered);

  for (int axis = 0; axis < 3; ++axis) {
    if (config.flip_prob > 0.0 && rng.bernoulli(config.flip_prob)) flip_axis(crop, axis);
  }

  if (config.max_rotation_deg > 0.0) {
    const double angle = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg) * std::numbers::pi / 180.0;
    Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
    const double norm = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    if (norm > 1e-12 && angle != 0.0) {
      for (auto& a : axis) a /= norm;
      crop = rotate(crop, rotation_matrix(axis, angle));
    }
  }

  crop = clip_normalize(std::move(crop));

  if (config.noise_std > 0.0 || config.noise_mean != 0.0) {
    for (auto& v : crop.voxels) v = static_cast<float>(v + rng.normal(config.noise_mean, config.noise_std));
  }

  const auto [lo, hi] = config.contrast_exponent_range;
  const double e = lo == hi ? lo : rng.uniform(lo, hi);
  if (e != 0.0) {
    for (auto& v : crop.voxels) v = static_cast<float>(std::pow(std::clamp(v, 0.0f, 1.0f), 1.0 + e));
  }

  for (auto& v : crop.voxels) v = std::clamp(v, 0.0f, 1.0f);
  out.crop = std::move(crop);
  return out;
}

}  // namespace noduleclip::preprocess
