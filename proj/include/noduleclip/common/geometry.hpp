#pragma once

#include <array>
#include <cmath>

namespace noduleclip {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<int, 3>;

inline bool all_finite(const Vec3& v) {
  return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]);
}

}  // namespace noduleclip
