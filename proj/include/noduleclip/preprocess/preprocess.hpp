#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "noduleclip/common/geometry.hpp"
#include "noduleclip/common/random.hpp"
#include "noduleclip/preprocess/volume.hpp"

namespace noduleclip::preprocess {

inline constexpr int kCropSize = 50;
inline constexpr int kCropCenter = kCropSize / 2;  // voxel index of the nodule centroid
inline constexpr float kPadHu = -1000.0f;
inline constexpr float kHuMin = -1000.0f;
inline constexpr float kHuMax = 500.0f;
inline constexpr int kNumViews = 9;
inline constexpr int kModelImageSize = 224;
inline constexpr std::string_view kPreprocessingVersion = "nine-plane-v1";

// 50x50x50 block at 1 mm, x-fastest. Holds raw HU straight out of crop_nodule
// and [0, 1] intensities after clip_normalize.
struct NoduleCrop {
  std::vector<float> voxels;
  std::vector<std::uint8_t> pad_mask;

  NoduleCrop();
  static std::size_t index(int x, int y, int z) {
    return static_cast<std::size_t>(x) + kCropSize * (static_cast<std::size_t>(y) + kCropSize * z);
  }
  float at(int x, int y, int z) const { return voxels[index(x, y, z)]; }
};

struct Image2D {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;  // row-major

  float at(int col, int row) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

// Plane order of slice_nine_planes. oblique_<a>_<s> contains axis <a> and the
// face diagonal (1, +/-1) of the plane orthogonal to <a>.
inline constexpr std::array<std::string_view, kNumViews> kPlaneIds = {
    "axial",          "coronal",        "sagittal",       "oblique_z_pos", "oblique_z_neg",
    "oblique_y_pos",  "oblique_y_neg",  "oblique_x_pos",  "oblique_x_neg"};

// Per-channel affine applied after channel replication.
struct ChannelStats {
  std::array<double, 3> mean{0.48145466, 0.4578275, 0.40821073};
  std::array<double, 3> stddev{0.26862954, 0.26130258, 0.27577711};
};

// Nine views x three channels x size x size floats, view-major then channel.
struct ViewStack {
  int size = kModelImageSize;
  std::vector<float> data;
  std::array<std::string, kNumViews> plane_ids;

  std::size_t view_stride() const { return 3 * static_cast<std::size_t>(size) * size; }
  float at(int view, int channel, int row, int col) const {
    return data[view * view_stride() + (static_cast<std::size_t>(channel) * size + row) * size + col];
  }
};

Volume resample_isotropic(const Volume& volume, const Vec3& target_spacing_mm = {1.0, 1.0, 1.0});

// Raw HU crop centred on the voxel nearest the centroid; outside voxels are
// filled with kPadHu and flagged in pad_mask. Requires 1 mm isotropic input.
NoduleCrop crop_nodule(const Volume& volume_1mm, const Vec3& centroid_mm);

float clip_normalize(float hu);
NoduleCrop clip_normalize(NoduleCrop raw);

std::array<Image2D, kNumViews> slice_nine_planes(const NoduleCrop& crop);

ViewStack to_model_input(std::span<const Image2D> images, const ChannelStats& stats = {},
                         int size = kModelImageSize);

// Bilinear resize with half-pixel centres and edge clamping.
Image2D resize_bilinear(const Image2D& image, int width, int height);

// Deterministic inference path: crop -> clip/normalise -> nine planes -> model input.
ViewStack make_view_stack(const Volume& volume_1mm, const Vec3& centroid_mm, const ChannelStats& stats = {});

}  // namespace noduleclip::preprocess
