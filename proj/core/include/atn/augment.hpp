#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "atn/dataset.hpp"
#include "atn/image.hpp"
#include "atn/kinematics.hpp"
#include "atn/rng.hpp"

namespace atn {

struct AugmentConfig {
  double crop_top = 0.25;
  double crop_bottom = 0.125;
  double brightness_min = 0.3;
  double brightness_max = 1.7;
  // Draws brightness from (0, 10] instead of [brightness_min, brightness_max].
  bool literal_brightness_range = false;
  bool flip = true;
  bool upsample = true;
  double target_hz = 2.0;

  void validate() const;
};

// How one augmented sample was derived from its source record.
struct Provenance {
  std::size_t source_index = 0;
  bool flipped = false;
  double brightness_factor = 1.0;
  std::size_t copy_index = 0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct AugmentedSample {
  Image image;
  float steering_deg = 0.0f;
  KinematicsVector kinematics;
  Provenance provenance;
};

// Keeps rows [floor(H*top), floor(H*top) + floor(H*(1-top-bottom))).
Image crop(const Image& image, double top_fraction, double bottom_fraction);

// Scales the HSV value channel by `factor` and clamps it to [0, 1].
Image brightness_jitter(const Image& image, double factor);
double draw_brightness(Rng& rng, const AugmentConfig& config);

// Mirrors the image and negates steering plus the sign-sensitive kinematics.
AugmentedSample horizontal_flip(const AugmentedSample& sample);

// 10 copies for |angle| > 10 deg, 5 for 5 < |angle| <= 10, otherwise 1.
int upsample_copies(double steering_deg);

// Duplicates every sample per upsample_copies(angle(sample)) and shuffles
// the result with `seed`. Copies keep their relative order before shuffling.
template <typename Sample, typename AngleFn, typename CopyFn>
std::vector<Sample> upsample_by_angle(const std::vector<Sample>& dataset, AngleFn angle, CopyFn set_copy_index,
                                      std::uint64_t seed) {
  std::vector<Sample> out;
  for (const auto& s : dataset) {
    const int copies = upsample_copies(angle(s));
    for (int c = 0; c < copies; ++c) {
      out.push_back(s);
      set_copy_index(out.back(), static_cast<std::size_t>(c));
    }
  }
  Rng rng(seed);
  for (std::size_t i = out.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(out[i - 1], out[std::min(j, i - 1)]);
  }
  return out;
}

std::vector<AugmentedSample> upsample_by_angle(const std::vector<AugmentedSample>& dataset, std::uint64_t seed);

// Greedy from the first frame: keeps a frame when at least 1/target_hz has
// elapsed since the last kept frame.
template <typename RecordT>
std::vector<RecordT> temporal_subsample(const std::vector<RecordT>& records, double target_hz) {
  std::vector<RecordT> out;
  if (records.empty()) return out;
  const double period = 1.0 / target_hz;
  const double slack = 1e-6 * period;
  double last = records.front().timestamp;
  out.push_back(records.front());
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].timestamp - last >= period - slack) {
      out.push_back(records[i]);
      last = records[i].timestamp;
    }
  }
  return out;
}

// Flip (optional), upsample, shuffle, then draw one brightness factor per
// entry. Only `indices` of the dataset are used as sources.
std::vector<Provenance> build_augmentation_plan(const Dataset& dataset, const std::vector<std::size_t>& indices,
                                                const AugmentConfig& config, std::uint64_t seed);
std::vector<Provenance> build_augmentation_plan(std::span<const float> steering, const std::vector<std::size_t>& indices,
                                                const AugmentConfig& config, std::uint64_t seed);

// Applies crop, flip and brightness of one plan entry to its source record.
AugmentedSample materialize(const Dataset& dataset, const Provenance& entry, const AugmentConfig& config);

// Materializes a whole plan in the dataset format (cropped images; the
// segmentation plane carries the mirrored ground truth).
Dataset materialize_dataset(const Dataset& dataset, const std::vector<Provenance>& plan,
                            const AugmentConfig& config);

// Sidecar text: one line per sample, "source flip brightness copy".
void write_provenance(const std::vector<Provenance>& plan, const std::filesystem::path& path);
std::vector<Provenance> read_provenance(const std::filesystem::path& path);

}  // namespace atn
