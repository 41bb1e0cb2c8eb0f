#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "atn/dataset.hpp"
#include "atn/image.hpp"
#include "atn/kinematics.hpp"
#include "atn/scene.hpp"

namespace atn {

// World frame convention: x += v cos(heading), y += v sin(heading), and a
// positive heading change turns the vehicle to its right. Positive steering,
// positive curvature and positive lateral offset all mean "to the right".

enum class Theme : std::uint8_t { Desert = 0, Suburb = 1, Mountain = 2 };

inline constexpr std::array<Theme, 3> kAllThemes{Theme::Desert, Theme::Suburb, Theme::Mountain};

std::string_view theme_name(Theme theme);
Theme parse_theme(std::string_view name);

using Rgb = std::array<float, 3>;

struct ThemeProfile {
  double curvature_max;      // 1/m
  double straight_probability;
  double straight_min, straight_max;  // m
  double arc_min, arc_max;            // m
  double transition_min, transition_max;
  double prop_spacing_min, prop_spacing_max;
  std::array<double, kNumSceneClasses> prop_weights;  // relative class frequencies of scenery
  std::array<Rgb, kNumSceneClasses> palette;
  double lighting;             // global brightness multiplier
  double inclination_rows;     // horizon shift amplitude (render cue only)
};

const ThemeProfile& theme_profile(Theme theme);

// Static scenery billboard anchored beside the road.
struct Prop {
  double x = 0.0, y = 0.0;
  double width = 1.0, height = 1.0;
  SceneClass cls = SceneClass::Tree;

  friend bool operator==(const Prop&, const Prop&) = default;
};

struct TrackPose {
  double x, y, heading, curvature;
};

struct TrackProjection {
  double s = 0.0;       // arc length of the closest centreline point
  double offset = 0.0;  // signed lateral distance, + right
  double heading = 0.0; // centreline tangent heading at s
};

// Centreline sampled every `spacing` metres; curvature is piecewise linear
// (clothoid transitions between straights and arcs), so heading is C1.
struct TrackSpec {
  std::uint64_t seed = 0;
  Theme theme = Theme::Desert;
  double lane_width = 3.7;
  double shoulder = 0.8;
  double spacing = 0.5;
  std::vector<double> xs, ys, headings, curvatures;
  std::vector<Prop> props;

  double length() const { return spacing * static_cast<double>(xs.size() - 1); }
  TrackPose pose_at(double s) const;
  // Closest centreline point, searched within +-search_radius of s_hint.
  TrackProjection project(double x, double y, double s_hint, double search_radius = 30.0) const;
  // Horizon row shift used as the inclination cue.
  double horizon_shift(double s) const;
  double lighting(double s) const;

  friend bool operator==(const TrackSpec&, const TrackSpec&) = default;
};

TrackSpec generate_track(std::uint64_t seed, Theme theme, double length_m = 2500.0);

struct VehicleState {
  double x = 0.0, y = 0.0;
  double heading = 0.0;       // rad
  double speed = 0.0;         // m/s
  double acceleration = 0.0;  // m/s^2
  double steering_deg = 0.0;  // last applied steering

  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

struct VehicleParams {
  double wheelbase = 2.7;
  double max_steering_deg = 45.0;
  double max_accel = 5.0;  // |throttle| = 1
  double drag = 0.02;      // 1/s, rolling resistance
};

// One explicit-Euler step of the kinematic bicycle model.
VehicleState step_dynamics(const VehicleState& state, double steering_cmd_deg, double throttle, double dt,
                           const VehicleParams& params = {});

// Throttle that holds `target_speed`.
double cruise_throttle(const VehicleState& state, double target_speed, const VehicleParams& params = {});

struct CameraModel {
  std::size_t height = 64;
  std::size_t width = 64;
  double mount_height = 1.6;
  double focal = 32.0;        // px
  double horizon_row = 20.0;  // for a level road
  std::size_t hood_rows = 6;
  double max_range = 120.0;   // m
};

struct RenderOptions {
  bool lighting = true;
  bool texture = true;
  bool noise = true;
  bool scenery = true;
  double noise_std = 0.03;
  double texture_amplitude = 0.05;
  std::uint64_t noise_seed = 0;
  CameraModel camera;
};

struct RenderedFrame {
  Image rgb;
  SegmentationMap seg;
};

RenderedFrame render_frame(const TrackSpec& track, const VehicleState& state, const RenderOptions& options,
                           double s_hint);

struct ExpertConfig {
  double lookahead_min = 4.0;   // m
  double lookahead_time = 0.45; // s, lookahead = max(min, time * speed)
};

// Pure pursuit towards the centreline point one lookahead distance ahead.
double expert_policy(const TrackSpec& track, const VehicleState& state, double s_hint,
                     const ExpertConfig& expert = {}, const VehicleParams& vehicle = {});

KinematicsVector vehicle_kinematics(const VehicleState& state, const TrackProjection& projection);

struct DemoConfig {
  double sim_hz = 10.0;
  double record_hz = 2.0;
  double episode_seconds = 120.0;
  double speed_min = 12.0;
  double speed_max = 18.0;
  // Ornstein-Uhlenbeck perturbation added to the executed steering; the
  // recorded label is always the clean expert command.
  double noise_std_deg = 2.5;
  double noise_tau = 1.0;
  double physics_dt = 0.01;
  RenderOptions render;
  VehicleParams vehicle;
  ExpertConfig expert;
};

// One episode per track; records are subsampled from sim_hz to record_hz.
Dataset collect_demonstrations(const std::vector<TrackSpec>& tracks, const DemoConfig& config, std::uint64_t seed);

struct Observation {
  const Image& rgb;
  KinematicsVector kinematics;
  VehicleState state;
  TrackProjection projection;
  std::size_t step = 0;
  double time = 0.0;
};

class SteeringPolicy {
 public:
  virtual ~SteeringPolicy() = default;
  // Called at the start of a rollout and after every failure reset.
  virtual void reset() {}
  virtual double act(const Observation& obs) = 0;
};

class ExpertSteering : public SteeringPolicy {
 public:
  ExpertSteering(const TrackSpec& track, ExpertConfig expert = {}, VehicleParams vehicle = {})
      : track_(track), expert_(expert), vehicle_(vehicle) {}
  double act(const Observation& obs) override {
    return expert_policy(track_, obs.state, obs.projection.s, expert_, vehicle_);
  }

 private:
  const TrackSpec& track_;
  ExpertConfig expert_;
  VehicleParams vehicle_;
};

class ConstantSteering : public SteeringPolicy {
 public:
  explicit ConstantSteering(double deg) : deg_(deg) {}
  double act(const Observation&) override { return deg_; }

 private:
  double deg_;
};

struct RolloutConfig {
  double distance_km = 1.0;
  double control_dt = 0.1;
  double physics_dt = 0.01;
  double cruise_speed = 15.0;
  RenderOptions render;
  VehicleParams vehicle;
  ExpertConfig expert;
  std::uint64_t seed = 0;
};

struct EpisodeStep {
  std::size_t step = 0;
  double t = 0.0;
  double x = 0.0, y = 0.0, heading = 0.0, speed = 0.0;
  double lateral_offset = 0.0;
  double cmd_deg = 0.0;
  double expert_deg = 0.0;
  bool failure = false;
  double distance = 0.0;
};

struct EpisodeLog {
  Theme theme = Theme::Desert;
  std::uint64_t track_seed = 0;
  std::vector<EpisodeStep> steps;
  std::vector<std::size_t> failure_events;  // step indices
  double distance_travelled = 0.0;          // m
  bool aborted = false;
  std::string abort_reason;

  double failures_per_10km() const;
};

// Renders, queries the policy and integrates the vehicle at control_dt until
// distance_km is covered. A lane-boundary violation (|offset| > lane_width/2)
// is logged as a failure; the vehicle is then reset onto the centreline and
// the rollout continues. A non-finite policy output aborts the rollout and
// counts as one more failure.
EpisodeLog closed_loop_rollout(SteeringPolicy& policy, const TrackSpec& track, const RolloutConfig& config);

void write_episode_csv(const EpisodeLog& log, const std::filesystem::path& path);

}  // namespace atn
