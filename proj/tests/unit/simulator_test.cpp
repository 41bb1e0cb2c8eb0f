#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <string>

#include "atn/errors.hpp"
#include "atn/sim.hpp"
#include "fixtures.hpp"

using namespace atn;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Straight east-bound road with no scenery.
TrackSpec straight_track(double length = 400.0) {
  TrackSpec t;
  t.seed = 1;
  t.theme = Theme::Desert;
  const auto n = static_cast<std::size_t>(length / t.spacing) + 1;
  for (std::size_t i = 0; i < n; ++i) {
    t.xs.push_back(t.spacing * static_cast<double>(i));
    t.ys.push_back(0.0);
    t.headings.push_back(0.0);
    t.curvatures.push_back(0.0);
  }
  return t;
}

struct Circle {
  double closure;   // distance from start after one turn, over R
  double diameter;  // farthest point from start, over 2R
};

// One full turn at constant steering and speed, split into a whole number of steps.
Circle drive_circle(long steps) {
  VehicleParams p;
  p.drag = 0.0;
  const double delta = 10.0;
  const double radius = p.wheelbase / std::tan(delta * kDeg);
  VehicleState s;
  s.speed = 10.0;
  const double dt = 2 * std::numbers::pi * radius / s.speed / static_cast<double>(steps);
  double far = 0;
  for (long i = 0; i < steps; ++i) {
    s = step_dynamics(s, delta, 0.0, dt, p);
    far = std::max(far, std::hypot(s.x, s.y));
  }
  return {std::hypot(s.x, s.y) / radius, far / (2 * radius)};
}

}  // namespace

TEST_SUITE("simulator") {

TEST_CASE("track generation") {
  const TrackSpec a = generate_track(5, Theme::Mountain);
  CHECK(a == generate_track(5, Theme::Mountain));
  CHECK_FALSE(a == generate_track(6, Theme::Mountain));
  CHECK(a.length() >= 1000.0);

  for (Theme theme : kAllThemes) {
    const TrackSpec t = generate_track(7, theme, 3000.0);
    const double kmax = theme_profile(theme).curvature_max;
    double worst_turn = 0;
    for (std::size_t i = 0; i < t.curvatures.size(); ++i) {
      CHECK(std::abs(t.curvatures[i]) <= kmax + 1e-12);
      if (i > 0) {
        // Heading is continuous: consecutive samples differ by at most the arc turned.
        double d = t.headings[i] - t.headings[i - 1];
        worst_turn = std::max(worst_turn, std::abs(d));
      }
    }
    CHECK(worst_turn <= kmax * t.spacing * 1.01);
  }

  double desert = 0, mountain = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (Theme theme : {Theme::Desert, Theme::Mountain}) {
      const TrackSpec t = generate_track(seed, theme, 1000.0);
      double m = 0;
      for (double k : t.curvatures) m += std::abs(k);
      (theme == Theme::Desert ? desert : mountain) += m / static_cast<double>(t.curvatures.size());
    }
  }
  CHECK(mountain > desert);
  CHECK(parse_theme("suburb") == Theme::Suburb);
  CHECK_THROWS_AS(parse_theme("arctic"), ConfigError);
}

TEST_CASE("rendering") {
  const TrackSpec road = straight_track();
  VehicleState s;
  s.x = 50.0;
  RenderOptions plain;
  plain.lighting = plain.texture = plain.noise = plain.scenery = false;

  SUBCASE("centred on a straight road the labels are mirror symmetric") {
    const RenderedFrame f = render_frame(road, s, plain, 50.0);
    std::size_t asymmetric = 0;
    for (std::size_t r = 0; r < f.seg.height; ++r)
      for (std::size_t c = 0; c < f.seg.width; ++c) asymmetric += f.seg.at(r, c) != f.seg.at(r, f.seg.width - 1 - c);
    CHECK(asymmetric == 0);
  }
  SUBCASE("sky fills the rows above the horizon") {
    const RenderedFrame f = render_frame(road, s, plain, 50.0);
    const auto horizon = static_cast<std::size_t>(plain.camera.horizon_row);
    for (std::size_t r = 0; r + 1 < horizon; ++r)
      for (std::size_t c = 0; c < f.seg.width; ++c) CHECK(f.seg.at(r, c) == static_cast<std::uint8_t>(SceneClass::Sky));
  }
  SUBCASE("colour equals the class palette without lighting and noise") {
    const TrackSpec t = generate_track(8, Theme::Suburb);
    const TrackPose p = t.pose_at(200.0);
    VehicleState v;
    v.x = p.x;
    v.y = p.y;
    v.heading = p.heading;
    RenderOptions o = plain;
    o.scenery = true;
    const RenderedFrame f = render_frame(t, v, o, 200.0);
    const auto& palette = theme_profile(Theme::Suburb).palette;
    for (std::size_t k = 0; k < f.seg.classes.size(); ++k)
      for (std::size_t ch = 0; ch < 3; ++ch) CHECK(f.rgb.pixels[3 * k + ch] == palette[f.seg.classes[k]][ch]);
  }
  SUBCASE("deterministic per seed, every label in range") {
    const TrackSpec t = generate_track(9, Theme::Mountain);
    const TrackPose p = t.pose_at(300.0);
    VehicleState v;
    v.x = p.x;
    v.y = p.y;
    v.heading = p.heading;
    RenderOptions o;
    o.noise_seed = 3;
    const RenderedFrame a = render_frame(t, v, o, 300.0);
    const RenderedFrame b = render_frame(t, v, o, 300.0);
    CHECK(a.rgb == b.rgb);
    CHECK(a.seg == b.seg);
    for (auto c : a.seg.classes) CHECK(c < kNumSceneClasses);
    o.noise_seed = 4;
    CHECK_FALSE(render_frame(t, v, o, 300.0).rgb == a.rgb);
  }
}

TEST_CASE("bicycle dynamics") {
  SUBCASE("zero steering drives straight") {
    VehicleState s;
    s.heading = 0.3;
    s.speed = 12.0;
    for (int i = 0; i < 100; ++i) s = step_dynamics(s, 0.0, 0.0, 0.01);
    CHECK(s.heading == 0.3);
    CHECK(std::atan2(s.y, s.x) == doctest::Approx(0.3));
  }
  SUBCASE("constant steering closes a circle of radius L/tan(delta)") {
    for (long steps : {200L, 1000L, 5000L}) {
      const Circle c = drive_circle(steps);
      CHECK(c.closure < 0.01);
      CHECK(std::abs(c.diameter - 1.0) < 0.01);
    }
  }
  SUBCASE("steering command is clamped to 45 degrees") {
    VehicleState s;
    s.speed = 10.0;
    const VehicleState a = step_dynamics(s, 80.0, 0.0, 0.01);
    const VehicleState b = step_dynamics(s, 45.0, 0.0, 0.01);
    CHECK(a.heading == b.heading);
    CHECK(a.steering_deg == 45.0);
  }
  SUBCASE("speed never increases without throttle") {
    VehicleState s;
    s.speed = 20.0;
    double previous = s.speed;
    for (int i = 0; i < 2000; ++i) {
      s = step_dynamics(s, 5.0, 0.0, 0.01);
      CHECK(s.speed <= previous);
      CHECK(s.speed >= 0.0);
      previous = s.speed;
    }
  }
}

TEST_CASE("expert") {
  const TrackSpec road = straight_track();
  VehicleState s;
  s.x = 50.0;
  s.speed = 15.0;
  CHECK(std::abs(expert_policy(road, s, 50.0)) < 0.5);
  // y grows to the right of an east-bound heading; negative y is left of centre.
  s.y = -0.8;
  CHECK(expert_policy(road, s, 50.0) > 0.0);
  s.y = 0.8;
  CHECK(expert_policy(road, s, 50.0) < 0.0);
}

TEST_CASE("demonstrations") {
  const Dataset a = testing::demo_dataset(2, 30, 10, Theme::Suburb);
  CHECK(a.hz == 2.0);
  CHECK(a.records.size() == 120);
  CHECK(a.episodes.size() == 2);
  for (const auto& r : a.records) CHECK(r.kinematics.within_ranges());
  CHECK(a.records[0].kinematics.previous_steering_deg == 0.0);
  CHECK(a == testing::demo_dataset(2, 30, 10, Theme::Suburb));

  const auto dir = testing::scratch_dir("dataset");
  write_dataset(a, dir / "ds");
  CHECK(read_dataset(dir / "ds") == a);
  std::ifstream manifest(dir / "ds" / "manifest.txt");
  std::string first;
  std::getline(manifest, first);
  CHECK(first == "version 1");
  CHECK(std::filesystem::file_size(dir / "ds" / "records.bin") ==
        120 * (8 + 4 + 5 * 4 + a.height * a.width * 4));
}

TEST_CASE("closed-loop rollout") {
  RolloutConfig config;
  config.distance_km = 1.0;
  config.seed = 11;

  SUBCASE("expert drives every theme without violations") {
    for (Theme theme : kAllThemes) {
      const TrackSpec t = generate_track(derive_seed(12, theme_name(theme)), theme, 1300.0);
      ExpertSteering expert(t);
      const EpisodeLog log = closed_loop_rollout(expert, t, config);
      INFO(theme_name(theme));
      CHECK(log.failure_events.empty());
      CHECK_FALSE(log.aborted);
      double worst = 0;
      for (const auto& st : log.steps) worst = std::max(worst, std::abs(st.lateral_offset));
      CHECK(worst < 0.3);
    }
  }
  SUBCASE("hard-over steering fails within 100 m") {
    const TrackSpec t = generate_track(13, Theme::Desert, 1300.0);
    ConstantSteering hard(45.0);
    const EpisodeLog log = closed_loop_rollout(hard, t, config);
    REQUIRE_FALSE(log.failure_events.empty());
    CHECK(log.steps[log.failure_events.front()].distance <= 100.0);
  }
  SUBCASE("distance accounting, reproducibility and CSV") {
    const TrackSpec t = generate_track(14, Theme::Mountain, 1300.0);
    ConstantSteering slight(1.0);
    const EpisodeLog a = closed_loop_rollout(slight, t, config);
    const EpisodeLog b = closed_loop_rollout(slight, t, config);
    CHECK(a.failure_events == b.failure_events);
    CHECK(a.distance_travelled == b.distance_travelled);
    CHECK(a.distance_travelled >= 1000.0);
    const double step_length = config.cruise_speed * config.control_dt * 1.05;
    CHECK(a.distance_travelled - 1000.0 <= step_length);
    double previous = 0;
    for (const auto& st : a.steps) {
      CHECK(st.distance >= previous);
      previous = st.distance;
    }
    CHECK(a.failures_per_10km() == doctest::Approx(a.failure_events.size() / (a.distance_travelled / 1e4)));

    const auto dir = testing::scratch_dir("rollout_csv");
    write_episode_csv(a, dir / "episode.csv");
    std::ifstream in(dir / "episode.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "step,t,x,y,heading,speed,lateral_offset,cmd_deg,expert_deg,failure_flag");
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == a.steps.size());
  }
  SUBCASE("non-finite policy output aborts as a failure") {
    const TrackSpec t = generate_track(15, Theme::Desert, 1300.0);
    ConstantSteering broken(std::numeric_limits<double>::quiet_NaN());
    const EpisodeLog log = closed_loop_rollout(broken, t, config);
    CHECK(log.aborted);
    CHECK(log.failure_events.size() == 1);
  }
  SUBCASE("track too short") {
    const TrackSpec t = generate_track(16, Theme::Desert, 1000.0);
    ExpertSteering expert(t);
    config.distance_km = 2.0;
    CHECK_THROWS_AS(closed_loop_rollout(expert, t, config), ConfigError);
  }
}

}  // TEST_SUITE
