#include "noduleclip/preprocess/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "noduleclip/common/error.hpp"

namespace noduleclip::preprocess {
namespace {

// Lerp form keeps constant inputs exactly constant.
inline double lerp(double a, double b, double t) { return a + t * (b - a); }

double sample_trilinear_clamped(const Volume& v, double x, double y, double z) {
  const double c[3] = {std::clamp(x, 0.0, v.dims[0] - 1.0), std::clamp(y, 0.0, v.dims[1] - 1.0),
                       std::clamp(z, 0.0, v.dims[2] - 1.0)};
  int i0[3], i1[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    i0[a] = static_cast<int>(std::floor(c[a]));
    i1[a] = std::min(i0[a] + 1, v.dims[a] - 1);
    t[a] = c[a] - i0[a];
  }
  auto row = [&](int y_, int z_) { return lerp(v.at(i0[0], y_, z_), v.at(i1[0], y_, z_), t[0]); };
  const double y0 = lerp(row(i0[1], i0[2]), row(i1[1], i0[2]), t[1]);
  const double y1 = lerp(row(i0[1], i1[2]), row(i1[1], i1[2]), t[1]);
  return lerp(y0, y1, t[2]);
}

double sample_crop(const NoduleCrop& crop, double x, double y, double z) {
  const double c[3] = {std::clamp(x, 0.0, kCropSize - 1.0), std::clamp(y, 0.0, kCropSize - 1.0),
                       std::clamp(z, 0.0, kCropSize - 1.0)};
  int i0[3], i1[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    i0[a] = static_cast<int>(std::floor(c[a]));
    i1[a] = std::min(i0[a] + 1, kCropSize - 1);
    t[a] = c[a] - i0[a];
  }
  auto row = [&](int y_, int z_) { return lerp(crop.at(i0[0], y_, z_), crop.at(i1[0], y_, z_), t[0]); };
  const double y0 = lerp(row(i0[1], i0[2]), row(i1[1], i0[2]), t[1]);
  const double y1 = lerp(row(i0[1], i1[2]), row(i1[1], i1[2]), t[1]);
  return lerp(y0, y1, t[2]);
}

bool is_unit_isotropic(const Volume& v) {
  for (double s : v.spacing_mm) {
    if (std::abs(s - 1.0) > 1e-6) return false;
  }
  return true;
}

}  // namespace

NoduleCrop::NoduleCrop()
    : voxels(static_cast<std::size_t>(kCropSize) * kCropSize * kCropSize, 0.0f),
      pad_mask(static_cast<std::size_t>(kCropSize) * kCropSize * kCropSize, 0) {}

Volume resample_isotropic(const Volume& volume, const Vec3& target) {
  volume.validate();
  for (double t : target) {
    if (!(t > 0.0) || !std::isfinite(t)) throw ValidationError("target spacing must be strictly positive");
  }
  if (volume.spacing_mm == target) return volume;

  // Output voxel centres start at the input origin; the count per axis keeps
  // the physical extent (n * spacing) to within one output voxel.
  Index3 out_dims{};
  Vec3 ratio{};
  for (int a = 0; a < 3; ++a) {
    const double n = std::round(volume.dims[a] * volume.spacing_mm[a] / target[a]);
    if (n < 1.0) throw ValidationError("resampling collapses an axis below one voxel");
    out_dims[a] = static_cast<int>(n);
    ratio[a] = target[a] / volume.spacing_mm[a];
  }
  Volume out(out_dims, target, volume.origin_mm);
  for (int z = 0; z < out_dims[2]; ++z) {
    for (int y = 0; y < out_dims[1]; ++y) {
      for (int x = 0; x < out_dims[0]; ++x) {
        out.at(x, y, z) = static_cast<float>(sample_trilinear_clamped(volume, x * ratio[0], y * ratio[1], z * ratio[2]));
      }
    }
  }
  return out;
}

NoduleCrop crop_nodule(const Volume& volume, const Vec3& centroid_mm) {
  if (!is_unit_isotropic(volume)) throw ValidationError("crop_nodule requires a 1 mm isotropic volume");
  if (!all_finite(centroid_mm) || !volume.contains_point(centroid_mm)) {
    throw ValidationError("centroid outside volume");
  }
  const Vec3 v = volume.to_voxel(centroid_mm);
  Index3 center{};
  for (int a = 0; a < 3; ++a) center[a] = std::clamp(static_cast<int>(std::lround(v[a])), 0, volume.dims[a] - 1);

  NoduleCrop crop;
  for (int z = 0; z < kCropSize; ++z) {
    const int sz = center[2] - kCropCenter + z;
    for (int y = 0; y < kCropSize; ++y) {
      const int sy = center[1] - kCropCenter + y;
      for (int x = 0; x < kCropSize; ++x) {
        const int sx = center[0] - kCropCenter + x;
        const auto i = NoduleCrop::index(x, y, z);
        const bool inside = sx >= 0 && sy >= 0 && sz >= 0 && sx < volume.dims[0] && sy < volume.dims[1] &&
                            sz < volume.dims[2];
        crop.voxels[i] = inside ? volume.at(sx, sy, sz) : kPadHu;
        crop.pad_mask[i] = inside ? 0 : 1;
      }
    }
  }
  return crop;
}

float clip_normalize(float hu) { return (std::clamp(hu, kHuMin, kHuMax) - kHuMin) / (kHuMax - kHuMin); }

NoduleCrop clip_normalize(NoduleCrop raw) {
  for (auto& v : raw.voxels) v = clip_normalize(v);
  return raw;
}

std::array<Image2D, kNumViews> slice_nine_planes(const NoduleCrop& crop) {
  const double h = 1.0 / std::numbers::sqrt2;
  // (u direction, v direction) per plane, in crop index space (x, y, z).
  const std::array<std::array<Vec3, 2>, kNumViews> axes = {{
      {{{1, 0, 0}, {0, 1, 0}}},   // axial
      {{{1, 0, 0}, {0, 0, 1}}},   // coronal
      {{{0, 1, 0}, {0, 0, 1}}},   // sagittal
      {{{h, h, 0}, {0, 0, 1}}},   // contains z
      {{{h, -h, 0}, {0, 0, 1}}},
      {{{h, 0, h}, {0, 1, 0}}},   // contains y
      {{{h, 0, -h}, {0, 1, 0}}},
      {{{0, h, h}, {1, 0, 0}}},   // contains x
      {{{0, h, -h}, {1, 0, 0}}},
  }};
  std::array<Image2D, kNumViews> out;
  for (int p = 0; p < kNumViews; ++p) {
    const auto& [du, dv] = axes[p];
    Image2D img{kCropSize, kCropSize, std::vector<float>(static_cast<std::size_t>(kCropSize) * kCropSize)};
    for (int r = 0; r < kCropSize; ++r) {
      const double s = r - kCropCenter;
      for (int c = 0; c < kCropSize; ++c) {
        const double t = c - kCropCenter;
        const double x = kCropCenter + t * du[0] + s * dv[0];
        const double y = kCropCenter + t * du[1] + s * dv[1];
        const double z = kCropCenter + t * du[2] + s * dv[2];
        img.pixels[static_cast<std::size_t>(r) * kCropSize + c] = static_cast<float>(sample_crop(crop, x, y, z));
      }
    }
    out[p] = std::move(img);
  }
  return out;
}

Image2D resize_bilinear(const Image2D& image, int width, int height) {
  if (image.width < 1 || image.height < 1 || width < 1 || height < 1) throw ValidationError("resize of empty image");
  Image2D out{width, height, std::vector<float>(static_cast<std::size_t>(width) * height)};
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int r = 0; r < height; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double ty = fy - y0;
    for (int c = 0; c < width; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double tx = fx - x0;
      const double top = lerp(image.at(x0, y0), image.at(x1, y0), tx);
      const double bottom = lerp(image.at(x0, y1), image.at(x1, y1), tx);
      out.pixels[static_cast<std::size_t>(r) * width + c] = static_cast<float>(lerp(top, bottom, ty));
    }
  }
  return out;
}

ViewStack to_model_input(std::span<const Image2D> images, const ChannelStats& stats, int size) {
  if (images.size() != static_cast<std::size_t>(kNumViews)) {
    throw ValidationError("expected 9 views, got " + std::to_string(images.size()));
  }
  ViewStack stack;
  stack.size = size;
  stack.data.resize(kNumViews * stack.view_stride());
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (int v = 0; v < kNumViews; ++v) {
    stack.plane_ids[v] = std::string(kPlaneIds[v]);
    const Image2D resized = resize_bilinear(images[v], size, size);
    for (int ch = 0; ch < 3; ++ch) {
      float* dst = stack.data.data() + v * stack.view_stride() + ch * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        dst[i] = static_cast<float>((resized.pixels[i] - stats.mean[ch]) / stats.stddev[ch]);
      }
    }
  }
  return stack;
}

ViewStack make_view_stack(const Volume& volume_1mm, const Vec3& centroid_mm, const ChannelStats& stats) {
  const auto planes = slice_nine_planes(clip_normalize(crop_nodule(volume_1mm, centroid_mm)));
  return to_model_input(planes, stats);
}

}  // namespace noduleclip::preprocess
