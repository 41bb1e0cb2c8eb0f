#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <fmt/format.h>

#include "atn/augment.hpp"
#include "atn/rng.hpp"
#include "atn/sim.hpp"

namespace atn {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;

double wrap_angle(double a) {
  while (a > std::numbers::pi) a -= 2.0 * std::numbers::pi;
  while (a < -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

}  // namespace

VehicleState step_dynamics(const VehicleState& state, double steering_cmd_deg, double throttle, double dt,
                           const VehicleParams& params) {
  const double delta_deg = std::clamp(steering_cmd_deg, -params.max_steering_deg, params.max_steering_deg);
  const double delta = delta_deg * kDegToRad;
  VehicleState next = state;
  next.x += state.speed * std::cos(state.heading) * dt;
  next.y += state.speed * std::sin(state.heading) * dt;
  next.heading += state.speed / params.wheelbase * std::tan(delta) * dt;
  const double accel = params.max_accel * std::clamp(throttle, -1.0, 1.0) - params.drag * state.speed;
  next.acceleration = accel;
  next.speed = std::max(0.0, state.speed + accel * dt);
  next.steering_deg = delta_deg;
  return next;
}

double cruise_throttle(const VehicleState& state, double target_speed, const VehicleParams& params) {
  const double gain = 1.0;  // 1/s
  const double wanted = params.drag * state.speed + gain * (target_speed - state.speed);
  return std::clamp(wanted / params.max_accel, -1.0, 1.0);
}

double expert_policy(const TrackSpec& track, const VehicleState& state, double s_hint, const ExpertConfig& expert,
                     const VehicleParams& vehicle) {
  const TrackProjection proj = track.project(state.x, state.y, s_hint);
  const double lookahead = std::max(expert.lookahead_min, expert.lookahead_time * state.speed);
  const TrackPose target = track.pose_at(proj.s + lookahead);
  const double dx = target.x - state.x, dy = target.y - state.y;
  const double fwd = dx * std::cos(state.heading) + dy * std::sin(state.heading);
  const double right = -dx * std::sin(state.heading) + dy * std::cos(state.heading);
  const double alpha = std::atan2(right, fwd);
  const double chord = std::hypot(fwd, right);
  const double delta = std::atan(2.0 * vehicle.wheelbase * std::sin(alpha) / chord);
  return std::clamp(delta * kRadToDeg, -vehicle.max_steering_deg, vehicle.max_steering_deg);
}

KinematicsVector vehicle_kinematics(const VehicleState& state, const TrackProjection& projection) {
  KinematicsVector k;
  k.acceleration = std::max(0.0, state.acceleration);
  k.speed_mph = state.speed * kMetersPerSecondToMph;
  k.heading_deg = wrap_angle(state.heading - projection.heading) * kRadToDeg;
  k.distance_to_curb = projection.offset;
  k.previous_steering_deg = state.steering_deg;
  return k;
}

Dataset collect_demonstrations(const std::vector<TrackSpec>& tracks, const DemoConfig& config, std::uint64_t seed) {
  if (!(config.sim_hz > 0.0) || !(config.record_hz > 0.0)) throw ConfigError("rates must be positive");
  const double control_dt = 1.0 / config.sim_hz;
  const auto substeps = std::max<long>(1, std::lround(control_dt / config.physics_dt));
  const double physics_dt = control_dt / static_cast<double>(substeps);
  const auto steps = static_cast<std::size_t>(std::llround(config.episode_seconds * config.sim_hz));

  Dataset ds;
  ds.height = config.render.camera.height;
  ds.width = config.render.camera.width;
  ds.hz = config.record_hz;
  ds.seeds = {seed};

  struct Pending {
    double timestamp;
    float label;
    KinematicsVector kinematics;
    VehicleState state;
    double s;
    std::size_t step;
  };

  for (std::size_t e = 0; e < tracks.size(); ++e) {
    const TrackSpec& track = tracks[e];
    Rng rng(derive_seed(seed, fmt::format("demo.episode.{}", e)));
    const double speed = uniform(rng, config.speed_min, config.speed_max);
    const double s0 = 5.0;
    const double needed = s0 + speed * config.episode_seconds + config.render.camera.max_range + 30.0;
    if (track.length() < needed) {
      throw ConfigError(fmt::format("track {} is {:.0f} m long but the episode needs {:.0f} m", track.seed,
                                    track.length(), needed));
    }
    const TrackPose start = track.pose_at(s0);
    const double offset0 = uniform(rng, -0.3, 0.3);
    VehicleState state;
    state.x = start.x - offset0 * std::sin(start.heading);
    state.y = start.y + offset0 * std::cos(start.heading);
    state.heading = start.heading + uniform(rng, -2.0, 2.0) * kDegToRad;
    state.speed = speed;

    std::vector<Pending> pending;
    pending.reserve(steps);
    double s_hint = s0;
    double noise = 0.0;
    const double decay = std::exp(-control_dt / config.noise_tau);
    const double kick = config.noise_std_deg * std::sqrt(1.0 - decay * decay);
    for (std::size_t k = 0; k < steps; ++k) {
      const TrackProjection proj = track.project(state.x, state.y, s_hint);
      s_hint = proj.s;
      const double label = expert_policy(track, state, s_hint, config.expert, config.vehicle);
      pending.push_back({static_cast<double>(k) / config.sim_hz, static_cast<float>(label),
                         round_to_float(vehicle_kinematics(state, proj)), state, proj.s, k});
      noise = noise * decay + kick * standard_normal(rng);
      const double executed = label + noise;
      for (long sub = 0; sub < substeps; ++sub) {
        state = step_dynamics(state, executed, cruise_throttle(state, speed, config.vehicle), physics_dt,
                              config.vehicle);
      }
    }
    const std::vector<Pending> kept = temporal_subsample(pending, config.record_hz);
    for (const Pending& p : kept) {
      RenderOptions opts = config.render;
      opts.noise_seed = derive_seed(seed, fmt::format("demo.render.{}.{}", e, p.step));
      const RenderedFrame frame = render_frame(track, p.state, opts, p.s);
      Record r;
      r.timestamp = p.timestamp;
      r.steering_deg = p.label;
      r.kinematics = p.kinematics;
      r.image = image_to_bytes(frame.rgb);
      r.seg = frame.seg.classes;
      ds.records.push_back(std::move(r));
    }
    ds.episodes.push_back({kept.size(), std::string(theme_name(track.theme)), track.seed});
  }
  return ds;
}

double EpisodeLog::failures_per_10km() const {
  if (distance_travelled <= 0.0) return 0.0;
  return static_cast<double>(failure_events.size()) / (distance_travelled / 10000.0);
}

EpisodeLog closed_loop_rollout(SteeringPolicy& policy, const TrackSpec& track, const RolloutConfig& config) {
  const double target = config.distance_km * 1000.0;
  const auto substeps = std::max<long>(1, std::lround(config.control_dt / config.physics_dt));
  const double physics_dt = config.control_dt / static_cast<double>(substeps);
  const double s0 = 5.0;
  if (track.length() < s0 + target + config.render.camera.max_range + 30.0) {
    throw ConfigError(fmt::format("track of {:.0f} m is too short for a {:.2f} km rollout", track.length(),
                                  config.distance_km));
  }
  EpisodeLog log;
  log.theme = track.theme;
  log.track_seed = track.seed;

  const TrackPose start = track.pose_at(s0);
  VehicleState state;
  state.x = start.x;
  state.y = start.y;
  state.heading = start.heading;
  state.speed = config.cruise_speed;
  double s_hint = s0;
  policy.reset();

  for (std::size_t step = 0; log.distance_travelled < target; ++step) {
    const TrackProjection proj = track.project(state.x, state.y, s_hint);
    s_hint = proj.s;
    RenderOptions opts = config.render;
    opts.noise_seed = derive_seed(config.seed, fmt::format("rollout.render.{}", step));
    const RenderedFrame frame = render_frame(track, state, opts, proj.s);
    const double t = static_cast<double>(step) * config.control_dt;
    const Observation obs{frame.rgb, vehicle_kinematics(state, proj), state, proj, step, t};
    const double expert_deg = expert_policy(track, state, proj.s, config.expert, config.vehicle);
    const double cmd = policy.act(obs);

    EpisodeStep rec;
    rec.step = step;
    rec.t = t;
    rec.x = state.x;
    rec.y = state.y;
    rec.heading = state.heading;
    rec.speed = state.speed;
    rec.lateral_offset = proj.offset;
    rec.cmd_deg = cmd;
    rec.expert_deg = expert_deg;
    if (!std::isfinite(cmd)) {
      log.aborted = true;
      log.abort_reason = fmt::format("non-finite steering command at step {}", step);
      rec.failure = true;
      rec.distance = log.distance_travelled;
      log.failure_events.push_back(step);
      log.steps.push_back(rec);
      break;
    }
    for (long sub = 0; sub < substeps; ++sub) {
      log.distance_travelled += state.speed * physics_dt;
      state = step_dynamics(state, cmd, cruise_throttle(state, config.cruise_speed, config.vehicle), physics_dt,
                            config.vehicle);
    }
    const TrackProjection after = track.project(state.x, state.y, s_hint);
    s_hint = after.s;
    rec.distance = log.distance_travelled;
    if (std::fabs(after.offset) > 0.5 * track.lane_width) {
      rec.failure = true;
      log.failure_events.push_back(step);
      const TrackPose p = track.pose_at(after.s);
      state.x = p.x;
      state.y = p.y;
      state.heading = p.heading;
      state.steering_deg = 0.0;
      state.acceleration = 0.0;
      state.speed = config.cruise_speed;
      policy.reset();
    }
    log.steps.push_back(rec);
  }
  return log;
}

void write_episode_csv(const EpisodeLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "step,t,x,y,heading,speed,lateral_offset,cmd_deg,expert_deg,failure_flag\n";
  for (const auto& s : log.steps) {
    out << fmt::format("{},{},{},{},{},{},{},{},{},{}\n", s.step, s.t, s.x, s.y, s.heading, s.speed,
                       s.lateral_offset, s.cmd_deg, s.expert_deg, s.failure ? 1 : 0);
  }
}

}  // namespace atn
