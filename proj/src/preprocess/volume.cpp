#include "noduleclip/preprocess/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>

#include <zlib.h>

#include "noduleclip/common/error.hpp"

namespace noduleclip::preprocess {

Volume::Volume(Index3 d, Vec3 spacing, Vec3 origin, float fill)
    : dims(d), spacing_mm(spacing), origin_mm(origin) {
  if (d[0] < 1 || d[1] < 1 || d[2] < 1) throw ValidationError("volume dimensions must be >= 1");
  voxels.assign(static_cast<std::size_t>(d[0]) * d[1] * d[2], fill);
}

Vec3 Volume::to_voxel(const Vec3& mm) const {
  return {(mm[0] - origin_mm[0]) / spacing_mm[0], (mm[1] - origin_mm[1]) / spacing_mm[1],
          (mm[2] - origin_mm[2]) / spacing_mm[2]};
}

bool Volume::contains_point(const Vec3& mm) const {
  const Vec3 v = to_voxel(mm);
  for (int a = 0; a < 3; ++a) {
    if (!(v[a] >= -0.5 && v[a] <= dims[a] - 0.5)) return false;
  }
  return true;
}

void Volume::validate() const {
  if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1) throw ValidationError("volume dimensions must be >= 1");
  for (double s : spacing_mm) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("volume spacing must be strictly positive");
  }
  if (!all_finite(origin_mm)) throw ValidationError("volume origin must be finite");
  if (voxels.size() != static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]) {
    throw ValidationError("volume voxel count does not match its dimensions");
  }
  if (!std::all_of(voxels.begin(), voxels.end(), [](float v) { return std::isfinite(v); })) {
    throw ValidationError("volume contains non-finite voxels");
  }
}

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

struct GzFile {
  gzFile handle = nullptr;
  ~GzFile() {
    if (handle) gzclose(handle);
  }
};

template <class T>
T get(const unsigned char* hdr, int offset, bool swap) {
  T v;
  std::memcpy(&v, hdr + offset, sizeof(T));
  if (swap) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

template <class T>
void put(unsigned char* hdr, int offset, T v) {
  std::memcpy(hdr + offset, &v, sizeof(T));
}

void swap_elements(std::vector<unsigned char>& data, std::size_t width) {
  if (width == 1) return;
  for (std::size_t i = 0; i + width <= data.size(); i += width) std::reverse(data.begin() + i, data.begin() + i + width);
}

template <class T>
void widen(const std::vector<unsigned char>& raw, std::vector<float>& out) {
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
    out[i] = static_cast<float>(v);
  }
}

bool has_gz_suffix(const std::filesystem::path& p) { return p.extension() == ".gz"; }

}  // namespace

Volume read_nifti(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw RuntimeFailure("volume file not found: " + path.string());
  GzFile f;
  f.handle = gzopen(path.c_str(), "rb");  // also reads uncompressed files
  if (!f.handle) throw RuntimeFailure("cannot open volume: " + path.string());

  unsigned char hdr[kHeaderSize];
  if (gzread(f.handle, hdr, kHeaderSize) != kHeaderSize) throw RuntimeFailure("truncated NIfTI header: " + path.string());
  bool swap = false;
  if (get<std::int32_t>(hdr, 0, false) != kHeaderSize) {
    if (get<std::int32_t>(hdr, 0, true) != kHeaderSize) throw RuntimeFailure("not a NIfTI-1 file: " + path.string());
    swap = true;
  }
  if (std::memcmp(hdr + 344, "n+1", 3) != 0) {
    throw RuntimeFailure("only single-file NIfTI-1 (magic n+1) is supported: " + path.string());
  }
  const auto ndim = get<std::int16_t>(hdr, 40, swap);
  if (ndim < 1 || ndim > 7) throw RuntimeFailure("bad NIfTI dimension count: " + path.string());
  Index3 dims{1, 1, 1};
  for (int a = 0; a < std::min<int>(ndim, 3); ++a) dims[a] = get<std::int16_t>(hdr, 42 + 2 * a, swap);
  for (int a = 3; a < ndim; ++a) {
    if (get<std::int16_t>(hdr, 42 + 2 * a, swap) > 1) throw RuntimeFailure("4D+ NIfTI volumes are not supported: " + path.string());
  }
  const auto datatype = get<std::int16_t>(hdr, 70, swap);
  Vec3 spacing{};
  for (int a = 0; a < 3; ++a) spacing[a] = std::abs(static_cast<double>(get<float>(hdr, 80 + 4 * a, swap)));
  for (int a = ndim; a < 3; ++a) spacing[a] = spacing[a] > 0 ? spacing[a] : 1.0;
  const double vox_offset = get<float>(hdr, 108, swap);
  const double slope = get<float>(hdr, 112, swap);
  const double inter = get<float>(hdr, 116, swap);
  const auto qform_code = get<std::int16_t>(hdr, 252, swap);
  const auto sform_code = get<std::int16_t>(hdr, 254, swap);
  Vec3 origin{0.0, 0.0, 0.0};
  if (sform_code > 0) {
    for (int a = 0; a < 3; ++a) origin[a] = get<float>(hdr, 280 + 16 * a + 12, swap);
  } else if (qform_code > 0) {
    for (int a = 0; a < 3; ++a) origin[a] = get<float>(hdr, 268 + 4 * a, swap);
  }

  Volume vol(dims, spacing, origin);
  std::size_t width = 0;
  switch (datatype) {
    case 2: case 256: width = 1; break;
    case 4: case 512: width = 2; break;
    case 8: case 16: width = 4; break;
    case 64: width = 8; break;
    default: throw RuntimeFailure("unsupported NIfTI datatype " + std::to_string(datatype) + ": " + path.string());
  }
  const auto skip = static_cast<long>(vox_offset) - kHeaderSize;
  if (skip < 0) throw RuntimeFailure("bad vox_offset in " + path.string());
  std::vector<unsigned char> pad(static_cast<std::size_t>(skip));
  if (skip > 0 && gzread(f.handle, pad.data(), static_cast<unsigned>(skip)) != skip) {
    throw RuntimeFailure("truncated NIfTI file: " + path.string());
  }
  std::vector<unsigned char> raw(vol.size() * width);
  std::size_t got = 0;
  while (got < raw.size()) {
    const auto chunk = static_cast<unsigned>(std::min<std::size_t>(raw.size() - got, 1u << 30));
    const int r = gzread(f.handle, raw.data() + got, chunk);
    if (r <= 0) throw RuntimeFailure("truncated NIfTI voxel data: " + path.string());
    got += static_cast<std::size_t>(r);
  }
  if (swap) swap_elements(raw, width);
  switch (datatype) {
    case 2: widen<std::uint8_t>(raw, vol.voxels); break;
    case 256: widen<std::int8_t>(raw, vol.voxels); break;
    case 4: widen<std::int16_t>(raw, vol.voxels); break;
    case 512: widen<std::uint16_t>(raw, vol.voxels); break;
    case 8: widen<std::int32_t>(raw, vol.voxels); break;
    case 16: widen<float>(raw, vol.voxels); break;
    case 64: widen<double>(raw, vol.voxels); break;
  }
  if (slope != 0.0 && std::isfinite(slope) && !(slope == 1.0 && inter == 0.0)) {
    for (auto& v : vol.voxels) v = static_cast<float>(v * slope + inter);
  }
  vol.validate();
  return vol;
}

void write_nifti(const Volume& volume, const std::filesystem::path& path, NiftiStorage storage) {
  volume.validate();
  unsigned char hdr[kVoxOffset] = {};
  put<std::int32_t>(hdr, 0, kHeaderSize);
  put<std::int16_t>(hdr, 40, 3);
  for (int a = 0; a < 3; ++a) put<std::int16_t>(hdr, 42 + 2 * a, static_cast<std::int16_t>(volume.dims[a]));
  for (int a = 3; a < 8; ++a) put<std::int16_t>(hdr, 42 + 2 * a, 1);
  const bool as_int = storage == NiftiStorage::int16;
  put<std::int16_t>(hdr, 70, as_int ? 4 : 16);
  put<std::int16_t>(hdr, 72, as_int ? 16 : 32);
  put<float>(hdr, 76, 1.0f);
  for (int a = 0; a < 3; ++a) put<float>(hdr, 80 + 4 * a, static_cast<float>(volume.spacing_mm[a]));
  put<float>(hdr, 108, static_cast<float>(kVoxOffset));
  put<float>(hdr, 112, 1.0f);
  put<std::uint8_t>(hdr, 123, 2);  // xyzt_units: mm
  put<std::int16_t>(hdr, 252, 1);
  put<std::int16_t>(hdr, 254, 1);
  for (int a = 0; a < 3; ++a) put<float>(hdr, 268 + 4 * a, static_cast<float>(volume.origin_mm[a]));
  for (int a = 0; a < 3; ++a) {
    put<float>(hdr, 280 + 16 * a + 4 * a, static_cast<float>(volume.spacing_mm[a]));
    put<float>(hdr, 280 + 16 * a + 12, static_cast<float>(volume.origin_mm[a]));
  }
  std::memcpy(hdr + 344, "n+1\0", 4);

  std::vector<unsigned char> data;
  if (as_int) {
    data.resize(volume.size() * 2);
    for (std::size_t i = 0; i < volume.size(); ++i) {
      const auto v = static_cast<std::int16_t>(std::clamp(std::lround(volume.voxels[i]), -32768L, 32767L));
      std::memcpy(data.data() + 2 * i, &v, 2);
    }
  } else {
    data.resize(volume.size() * 4);
    std::memcpy(data.data(), volume.voxels.data(), data.size());
  }

  GzFile f;
  f.handle = gzopen(path.c_str(), has_gz_suffix(path) ? "wb6" : "wbT");
  if (!f.handle) throw RuntimeFailure("cannot write volume: " + path.string());
  if (gzwrite(f.handle, hdr, kVoxOffset) != kVoxOffset) throw RuntimeFailure("write failed: " + path.string());
  std::size_t done = 0;
  while (done < data.size()) {
    const auto chunk = static_cast<unsigned>(std::min<std::size_t>(data.size() - done, 1u << 30));
    if (gzwrite(f.handle, data.data() + done, chunk) != static_cast<int>(chunk)) {
      throw RuntimeFailure("write failed: " + path.string());
    }
    done += chunk;
  }
}

}  // namespace noduleclip::preprocess
