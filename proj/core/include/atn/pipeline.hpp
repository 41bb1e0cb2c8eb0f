#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atn/augment.hpp"
#include "atn/dataset.hpp"
#include "atn/metrics.hpp"
#include "atn/model.hpp"
#include "atn/vision.hpp"

namespace atn {

struct PrepareConfig {
  AugmentConfig augment;
  FlowConfig flow;
  // Rows of zeros added above/below the cropped image to reach the model's
  // input height.
  std::size_t pad_top = 4;
  std::size_t pad_bottom = 4;
};

// Per-record network inputs shared by every model variant: cropped RGB,
// predicted segmentation of the image and of its mirror, and the flow from
// the previous record of the same episode (zero on an episode's first record).
struct PreparedData {
  std::size_t height = 0;  // cropped
  std::size_t width = 0;
  std::size_t pad_top = 0;
  std::size_t pad_bottom = 0;
  double hz = 0.0;
  std::vector<std::uint8_t> rgb;
  std::vector<std::uint8_t> seg;
  std::vector<std::uint8_t> seg_flipped;
  std::vector<float> flow_u;
  std::vector<float> flow_v;
  std::vector<float> steering;
  std::vector<KinematicsVector> kinematics;
  std::vector<std::size_t> episode_offsets;
  std::vector<std::size_t> episode_of;
  std::vector<std::string> episode_themes;

  std::size_t size() const { return steering.size(); }
  std::size_t padded_height() const { return height + pad_top + pad_bottom; }
  std::size_t episode_start(std::size_t record) const { return episode_offsets[episode_of[record]]; }
  Image image(std::size_t record) const;
  SegmentationMap segmentation(std::size_t record, bool flipped) const;
  FlowField flow(std::size_t record) const;
};

// `segnet` may be null, in which case the dataset's ground-truth labels
// stand in for predicted segmentation.
PreparedData prepare_data(const Dataset& dataset, const SegNet* segnet, const PrepareConfig& config);

// Same, reusing segmentation and flow stored in `cache_dir` when its key
// file matches `key`; otherwise computes them and rewrites the cache.
PreparedData prepare_data_cached(const Dataset& dataset, const SegNet* segnet, const PrepareConfig& config,
                                 const std::filesystem::path& cache_dir, std::string_view key);

// Builds the [C, H_pad, W] input of one frame.
void assemble_frame(const Image& cropped_rgb, const SegmentationMap* seg, const FlowField* flow,
                    const AtnConfig& config, std::size_t pad_top, float* dst);

// Frames [N*w, C, H, W], kinematics [N*w, 5] and targets for a list of
// augmented samples (flip and brightness apply to the whole window).
void assemble_batch(const PreparedData& data, const AtnConfig& config, std::span<const Provenance> samples,
                    Tensor& frames, Tensor& kinematics, std::vector<float>& targets);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Whole episodes go to one side; record indices stay in dataset order.
Split split_by_episode(const PreparedData& data, double val_fraction, double test_fraction, std::uint64_t seed);

// Infer-mode predictions on un-augmented records. Consecutive records of one
// episode form one series episode.
PredictionSeries predict_series(const AtnModel& model, const PreparedData& data, const std::vector<std::size_t>& records);

}  // namespace atn
