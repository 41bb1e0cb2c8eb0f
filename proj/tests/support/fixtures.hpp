#pragma once

// Small simulator-backed datasets for tests.

#include <filesystem>
#include <string>
#include <vector>

#include "atn/pipeline.hpp"
#include "atn/rng.hpp"
#include "atn/sim.hpp"

namespace atn::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "atn_unit" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// `episodes` demonstrations of `seconds` each, recorded at 2 Hz.
inline Dataset demo_dataset(std::size_t episodes, double seconds, std::uint64_t seed,
                            Theme theme = Theme::Desert) {
  std::vector<TrackSpec> tracks;
  for (std::size_t e = 0; e < episodes; ++e) {
    tracks.push_back(generate_track(derive_seed(seed, "fixture.track." + std::to_string(e)), theme,
                                    seconds * 20.0 + 200.0));
  }
  DemoConfig config;
  config.episode_seconds = seconds;
  return collect_demonstrations(tracks, config, derive_seed(seed, "fixture.demo"));
}

// Ground-truth segmentation stands in for the segmentation network.
inline PreparedData demo_prepared(std::size_t episodes, double seconds, std::uint64_t seed) {
  return prepare_data(demo_dataset(episodes, seconds, seed), nullptr, PrepareConfig{});
}

// A narrow model that trains in seconds.
inline AtnConfig small_config(const std::string& variant = "atn_base") {
  AtnConfig c = AtnConfig::variant(variant);
  c.conv_depths = {8, 12, 16, 16, 16};
  c.lstm_width = 32;
  c.fc_widths = {64, 32, 16};
  return c;
}

}  // namespace atn::testing
