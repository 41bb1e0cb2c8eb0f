#pragma once

#include <array>

namespace atn {

inline constexpr double kMetersPerSecondToMph = 2.2369362920544;

// Vehicle kinematics fed to the network next to the visual context features.
// Value ranges (used for normalization):
//   acceleration      [0, 5]    m/s^2
//   speed             [0, 60]   mph
//   heading           [-45, 45] degrees, relative to the road tangent
//   distance_to_curb  [-2, 2]   m, signed offset from the lane centre (+ right)
//   previous_steering [-45, 45] degrees (+ right)
struct KinematicsVector {
  double acceleration = 0.0;
  double speed_mph = 0.0;
  double heading_deg = 0.0;
  double distance_to_curb = 0.0;
  double previous_steering_deg = 0.0;

  static constexpr std::size_t kSize = 5;

  std::array<double, kSize> as_array() const {
    return {acceleration, speed_mph, heading_deg, distance_to_curb, previous_steering_deg};
  }
  static KinematicsVector from_array(const std::array<double, kSize>& a) {
    return {a[0], a[1], a[2], a[3], a[4]};
  }

  // Left-right mirror: sign-sensitive components flip, speed/accel do not.
  KinematicsVector mirrored() const {
    return {acceleration, speed_mph, -heading_deg, -distance_to_curb, -previous_steering_deg};
  }

  bool within_ranges() const;

  friend bool operator==(const KinematicsVector&, const KinematicsVector&) = default;
};

struct KinematicsRange {
  double lo, hi;
  bool one_sided;
};

inline constexpr std::array<KinematicsRange, KinematicsVector::kSize> kKinematicsRanges{{
    {0.0, 5.0, true},
    {0.0, 60.0, true},
    {-45.0, 45.0, false},
    {-2.0, 2.0, false},
    {-45.0, 45.0, false},
}};

// Affine map onto [0,1] (one-sided ranges) or [-1,1]; out-of-range inputs are
// clamped and reported through a rate-limited warning.
std::array<float, KinematicsVector::kSize> normalize(const KinematicsVector& k);

}  // namespace atn
