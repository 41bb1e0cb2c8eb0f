#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace atn {

// Driving-scene categories. Ids are stable: they are written to datasets and
// scaled into the network input as id / 8.
enum class SceneClass : std::uint8_t {
  Sky = 0,
  Road = 1,
  LaneMarking = 2,
  Building = 3,
  TrafficLight = 4,
  Pedestrian = 5,
  Tree = 6,
  Pavement = 7,
  Vehicle = 8,
};

inline constexpr std::size_t kNumSceneClasses = 9;

inline constexpr std::array<std::string_view, kNumSceneClasses> kSceneClassNames{
    "sky", "road", "lane markings", "building", "traffic lights", "pedestrian", "tree", "pavement", "vehicle"};

struct SegmentationMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> classes;  // row-major class ids in [0, 8]

  SegmentationMap() = default;
  SegmentationMap(std::size_t h, std::size_t w, SceneClass fill = SceneClass::Sky)
      : height(h), width(w), classes(h * w, static_cast<std::uint8_t>(fill)) {}

  std::uint8_t at(std::size_t r, std::size_t c) const { return classes[r * width + c]; }
  std::uint8_t& at(std::size_t r, std::size_t c) { return classes[r * width + c]; }

  friend bool operator==(const SegmentationMap&, const SegmentationMap&) = default;
};

}  // namespace atn
