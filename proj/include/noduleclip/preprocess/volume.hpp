#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "noduleclip/common/geometry.hpp"

namespace noduleclip::preprocess {

// HU-valued scalar grid. Voxel (i, j, k) sits at origin + (i, j, k) * spacing;
// storage is x-fastest. Direction cosines are taken as identity.
struct Volume {
  Index3 dims{0, 0, 0};
  Vec3 spacing_mm{1.0, 1.0, 1.0};
  Vec3 origin_mm{0.0, 0.0, 0.0};
  std::vector<float> voxels;

  Volume() = default;
  Volume(Index3 dims, Vec3 spacing, Vec3 origin, float fill = 0.0f);

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * z);
  }
  float at(int x, int y, int z) const { return voxels[index(x, y, z)]; }
  float& at(int x, int y, int z) { return voxels[index(x, y, z)]; }
  std::size_t size() const { return voxels.size(); }

  // Continuous voxel coordinate of a physical point.
  Vec3 to_voxel(const Vec3& mm) const;
  bool contains_point(const Vec3& mm) const;

  // Throws ValidationError on empty dims, non-positive spacing or non-finite voxels.
  void validate() const;
};

enum class NiftiStorage { int16, float32 };

// NIfTI-1 single-file images, optionally gzip-compressed (.nii.gz). Reads
// uint8/int8/int16/uint16/int32/float32/float64 in either byte order and
// applies scl_slope/scl_inter. The origin comes from the sform (preferred) or
// qform translation.
Volume read_nifti(const std::filesystem::path& path);
void write_nifti(const Volume& volume, const std::filesystem::path& path,
                 NiftiStorage storage = NiftiStorage::float32);

}  // namespace noduleclip::preprocess
