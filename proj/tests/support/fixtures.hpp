#pragma once

#include <filesystem>
#include <string>

#include "noduleclip/common/random.hpp"
#include "noduleclip/preprocess/preprocess.hpp"

namespace nc_test {

// Random view stack with values roughly in the normalised input range.
inline noduleclip::preprocess::ViewStack random_stack(int size, std::uint64_t seed) {
  noduleclip::Rng rng(seed);
  noduleclip::preprocess::ViewStack s;
  s.size = size;
  s.data.resize(static_cast<std::size_t>(noduleclip::preprocess::kNumViews) * 3 * size * size);
  for (auto& v : s.data) v = static_cast<float>(rng.normal(0.0, 1.0));
  for (int i = 0; i < noduleclip::preprocess::kNumViews; ++i) {
    s.plane_ids[i] = std::string(noduleclip::preprocess::kPlaneIds[i]);
  }
  return s;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("noduleclip_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace nc_test
