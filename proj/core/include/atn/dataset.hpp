#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "atn/image.hpp"
#include "atn/kinematics.hpp"

namespace atn {

// One recorded timestep. Image bytes; kinematics rounded to float precision.
struct Record {
  double timestamp = 0.0;
  float steering_deg = 0.0f;
  KinematicsVector kinematics;
  std::vector<std::uint8_t> image;  // H x W x 3
  std::vector<std::uint8_t> seg;    // H x W class ids

  friend bool operator==(const Record&, const Record&) = default;
};

struct EpisodeInfo {
  std::size_t length = 0;
  std::string theme;
  std::uint64_t track_seed = 0;

  friend bool operator==(const EpisodeInfo&, const EpisodeInfo&) = default;
};

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  double hz = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<EpisodeInfo> episodes;
  std::vector<Record> records;

  // Index of the first record of every episode (plus one past the end).
  std::vector<std::size_t> episode_offsets() const;
  // Episode id of every record.
  std::vector<std::size_t> episode_index() const;

  Image image(std::size_t i) const { return image_from_bytes(records[i].image, height, width, 3); }
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

KinematicsVector round_to_float(const KinematicsVector& k);

// Directory layout: manifest.txt + records.bin (little-endian, per record:
// timestamp f64, steering f32, kinematics 5 x f32, image H*W*3 u8, seg H*W u8).
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace atn
