#include "atn/kinematics.hpp"

#include <algorithm>
#include <atomic>

#include <spdlog/spdlog.h>

namespace atn {
namespace {

constexpr std::array<const char*, KinematicsVector::kSize> kNames{
    "acceleration", "speed", "heading", "distance_to_curb", "previous_steering"};

std::atomic<int> g_clamp_warnings{0};

}  // namespace

bool KinematicsVector::within_ranges() const {
  const auto a = as_array();
  for (std::size_t i = 0; i < kSize; ++i) {
    if (a[i] < kKinematicsRanges[i].lo || a[i] > kKinematicsRanges[i].hi) return false;
  }
  return true;
}

std::array<float, KinematicsVector::kSize> normalize(const KinematicsVector& k) {
  const auto a = k.as_array();
  std::array<float, KinematicsVector::kSize> out{};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& r = kKinematicsRanges[i];
    double v = a[i];
    if (v < r.lo - 1e-9 || v > r.hi + 1e-9) {
      if (g_clamp_warnings.fetch_add(1) < 10) {
        spdlog::warn("kinematics {}={} outside [{}, {}], clamped", kNames[i], v, r.lo, r.hi);
      }
    }
    v = std::clamp(v, r.lo, r.hi);
    out[i] = r.one_sided ? static_cast<float>((v - r.lo) / (r.hi - r.lo))
                         : static_cast<float>(2.0 * (v - r.lo) / (r.hi - r.lo) - 1.0);
  }
  return out;
}

}  // namespace atn
