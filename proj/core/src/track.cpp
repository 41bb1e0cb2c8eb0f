#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "atn/rng.hpp"
#include "atn/sim.hpp"

namespace atn {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Scenery class weights, indexed by SceneClass.
//                                  sky road mark bld  tl   ped  tree pav  veh
constexpr std::array<double, 9> kDesertProps{0, 0, 0, 0.10, 0.10, 0.10, 0.45, 0, 0.25};
constexpr std::array<double, 9> kSuburbProps{0, 0, 0, 0.40, 0.15, 0.15, 0.15, 0, 0.15};
constexpr std::array<double, 9> kMountainProps{0, 0, 0, 0.10, 0.05, 0.05, 0.70, 0, 0.10};

const ThemeProfile kDesert{
    1.0 / 22.0, 0.40, 40.0, 140.0, 30.0, 110.0, 15.0, 35.0, 14.0, 40.0, kDesertProps,
    {{{0.55f, 0.74f, 0.95f},    // sky
      {0.40f, 0.39f, 0.38f},    // road
      {0.92f, 0.90f, 0.80f},    // lane markings
      {0.72f, 0.45f, 0.32f},    // building
      {0.95f, 0.75f, 0.10f},    // traffic light
      {0.85f, 0.20f, 0.25f},    // pedestrian
      {0.25f, 0.50f, 0.22f},    // tree
      {0.62f, 0.54f, 0.40f},    // pavement
      {0.20f, 0.30f, 0.75f}}},  // vehicle
    1.0, 0.0};

const ThemeProfile kSuburb{
    1.0 / 18.0, 0.30, 30.0, 110.0, 25.0, 90.0, 12.0, 30.0, 8.0, 22.0, kSuburbProps,
    {{{0.62f, 0.70f, 0.82f},
      {0.34f, 0.35f, 0.38f},
      {0.95f, 0.95f, 0.95f},
      {0.60f, 0.55f, 0.62f},
      {0.90f, 0.65f, 0.10f},
      {0.80f, 0.25f, 0.35f},
      {0.20f, 0.45f, 0.28f},
      {0.55f, 0.55f, 0.52f},
      {0.70f, 0.15f, 0.15f}}},
    0.88, 0.6};

const ThemeProfile kMountain{
    1.0 / 14.0, 0.20, 20.0, 80.0, 25.0, 80.0, 10.0, 25.0, 10.0, 30.0, kMountainProps,
    {{{0.70f, 0.76f, 0.85f},
      {0.30f, 0.30f, 0.30f},
      {0.90f, 0.88f, 0.60f},
      {0.50f, 0.40f, 0.35f},
      {0.95f, 0.60f, 0.05f},
      {0.75f, 0.30f, 0.20f},
      {0.15f, 0.38f, 0.18f},
      {0.45f, 0.42f, 0.38f},
      {0.85f, 0.85f, 0.90f}}},
    0.78, 3.0};

SceneClass draw_prop_class(Rng& rng, const std::array<double, 9>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return static_cast<SceneClass>(i);
    u -= weights[i];
  }
  return SceneClass::Tree;
}

void prop_size(SceneClass cls, Rng& rng, double& width, double& height) {
  switch (cls) {
    case SceneClass::Building: width = uniform(rng, 6.0, 12.0), height = uniform(rng, 5.0, 12.0); break;
    case SceneClass::TrafficLight: width = 0.6, height = uniform(rng, 4.0, 5.0); break;
    case SceneClass::Pedestrian: width = 0.7, height = uniform(rng, 1.6, 1.9); break;
    case SceneClass::Vehicle: width = uniform(rng, 1.8, 2.2), height = uniform(rng, 1.4, 1.8); break;
    default: width = uniform(rng, 2.0, 4.0), height = uniform(rng, 4.0, 8.0); break;
  }
}

}  // namespace

std::string_view theme_name(Theme theme) {
  switch (theme) {
    case Theme::Desert: return "desert";
    case Theme::Suburb: return "suburb";
    case Theme::Mountain: return "mountain";
  }
  return "desert";
}

Theme parse_theme(std::string_view name) {
  for (Theme t : kAllThemes) {
    if (theme_name(t) == name) return t;
  }
  throw ConfigError(fmt::format("unknown theme '{}' (expected desert, suburb or mountain)", name));
}

const ThemeProfile& theme_profile(Theme theme) {
  switch (theme) {
    case Theme::Suburb: return kSuburb;
    case Theme::Mountain: return kMountain;
    default: return kDesert;
  }
}

TrackPose TrackSpec::pose_at(double s) const {
  const double u = std::clamp(s / spacing, 0.0, static_cast<double>(xs.size() - 1));
  const auto i = std::min(static_cast<std::size_t>(u), xs.size() - 2);
  const double t = u - static_cast<double>(i);
  return {xs[i] + t * (xs[i + 1] - xs[i]), ys[i] + t * (ys[i + 1] - ys[i]),
          headings[i] + t * (headings[i + 1] - headings[i]),
          curvatures[i] + t * (curvatures[i + 1] - curvatures[i])};
}

TrackProjection TrackSpec::project(double x, double y, double s_hint, double search_radius) const {
  const auto last = static_cast<long>(xs.size()) - 1;
  const long lo = std::clamp(static_cast<long>(std::floor((s_hint - search_radius) / spacing)), 0L, last);
  const long hi = std::clamp(static_cast<long>(std::ceil((s_hint + search_radius) / spacing)), 0L, last);
  long best = lo;
  double best_d = 1e300;
  for (long i = lo; i <= hi; ++i) {
    const double dx = x - xs[i], dy = y - ys[i];
    const double d = dx * dx + dy * dy;
    if (d < best_d) best_d = d, best = i;
  }
  TrackProjection out;
  double best_seg = 1e300;
  for (long i = std::max(0L, best - 1); i <= std::min(last - 1, best); ++i) {
    const double ax = xs[i], ay = ys[i];
    const double bx = xs[i + 1] - ax, by = ys[i + 1] - ay;
    const double len2 = bx * bx + by * by;
    const double t = std::clamp(((x - ax) * bx + (y - ay) * by) / len2, 0.0, 1.0);
    const double px = ax + t * bx, py = ay + t * by;
    const double d = (x - px) * (x - px) + (y - py) * (y - py);
    if (d < best_seg) {
      best_seg = d;
      const double heading = headings[i] + t * (headings[i + 1] - headings[i]);
      out.s = (static_cast<double>(i) + t) * spacing;
      out.heading = heading;
      out.offset = -(x - px) * std::sin(heading) + (y - py) * std::cos(heading);
    }
  }
  return out;
}

double TrackSpec::horizon_shift(double s) const {
  const double amp = theme_profile(theme).inclination_rows;
  if (amp == 0.0) return 0.0;
  const double phase = static_cast<double>(seed % 997) * 0.01;
  return amp * std::sin(kTwoPi * s / 350.0 + phase);
}

double TrackSpec::lighting(double s) const {
  const double phase = static_cast<double>(seed % 991) * 0.013;
  return theme_profile(theme).lighting * (1.0 + 0.08 * std::sin(kTwoPi * s / 600.0 + phase));
}

TrackSpec generate_track(std::uint64_t seed, Theme theme, double length_m) {
  if (!(length_m > 50.0)) throw ConfigError("track length must exceed 50 m");
  const ThemeProfile& prof = theme_profile(theme);
  Rng rng(derive_seed(seed, fmt::format("track.{}", theme_name(theme))));
  TrackSpec track;
  track.seed = seed;
  track.theme = theme;
  const double ds = track.spacing;
  const auto n = static_cast<std::size_t>(std::ceil(length_m / ds)) + 1;

  // Curvature profile: a straight start, then straights and arcs joined by
  // linear-curvature transitions.
  std::vector<double> kappa;
  kappa.reserve(n + 1024);
  double current = 0.0;
  auto hold = [&](double value, double meters) {
    for (double m = 0.0; m < meters && kappa.size() < n; m += ds) kappa.push_back(value);
  };
  auto ramp = [&](double target, double meters) {
    const auto steps = std::max<std::size_t>(1, static_cast<std::size_t>(meters / ds));
    for (std::size_t k = 1; k <= steps && kappa.size() < n; ++k) {
      kappa.push_back(current + (target - current) * static_cast<double>(k) / static_cast<double>(steps));
    }
    current = target;
  };
  hold(0.0, 40.0);
  while (kappa.size() < n) {
    double target = 0.0, meters = 0.0;
    if (uniform01(rng) < prof.straight_probability || current != 0.0) {
      // Every arc returns through a straight-ish section before the next one
      // with some probability; otherwise a reverse curve follows directly.
      if (current != 0.0 && uniform01(rng) < 0.35) {
        const double sign = current > 0.0 ? -1.0 : 1.0;
        target = sign * uniform(rng, 0.35, 1.0) * prof.curvature_max;
        meters = uniform(rng, prof.arc_min, prof.arc_max);
      } else {
        target = 0.0;
        meters = uniform(rng, prof.straight_min, prof.straight_max);
      }
    } else {
      const double sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
      target = sign * uniform(rng, 0.35, 1.0) * prof.curvature_max;
      meters = uniform(rng, prof.arc_min, prof.arc_max);
    }
    ramp(target, uniform(rng, prof.transition_min, prof.transition_max));
    hold(target, meters);
  }

  track.curvatures = std::move(kappa);
  track.xs.assign(n, 0.0);
  track.ys.assign(n, 0.0);
  track.headings.assign(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    const double dtheta = 0.5 * (track.curvatures[i - 1] + track.curvatures[i]) * ds;
    const double mid = track.headings[i - 1] + 0.5 * dtheta;
    track.headings[i] = track.headings[i - 1] + dtheta;
    track.xs[i] = track.xs[i - 1] + ds * std::cos(mid);
    track.ys[i] = track.ys[i - 1] + ds * std::sin(mid);
  }

  Rng prop_rng(derive_seed(seed, fmt::format("props.{}", theme_name(theme))));
  const double clearance = 0.5 * track.lane_width + track.shoulder + 1.5;
  for (double s = 15.0; s < track.length() - 5.0; s += uniform(prop_rng, prof.prop_spacing_min, prof.prop_spacing_max)) {
    Prop p;
    p.cls = draw_prop_class(prop_rng, prof.prop_weights);
    prop_size(p.cls, prop_rng, p.width, p.height);
    const double side = uniform01(prop_rng) < 0.5 ? -1.0 : 1.0;
    double lateral = clearance + 0.5 * p.width + uniform(prop_rng, 0.0, 8.0);
    if (p.cls == SceneClass::TrafficLight || p.cls == SceneClass::Pedestrian) lateral = clearance + uniform(prop_rng, 0.0, 1.5);
    const TrackPose pose = track.pose_at(s);
    p.x = pose.x - side * lateral * std::sin(pose.heading);
    p.y = pose.y + side * lateral * std::cos(pose.heading);
    // Tight curves can bring a far-side prop back onto the road.
    const TrackProjection pr = track.project(p.x, p.y, s, 60.0);
    if (std::fabs(pr.offset) < clearance + 0.5 * p.width - 1e-6) continue;
    track.props.push_back(p);
  }
  return track;
}

}  // namespace atn
