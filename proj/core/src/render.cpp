#include <algorithm>
#include <cmath>
#include <limits>

#include "atn/rng.hpp"
#include "atn/sim.hpp"

namespace atn {
namespace {

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double lattice(long ix, long iy, std::uint64_t seed) {
  const std::uint64_t h = mix(seed ^ mix(static_cast<std::uint64_t>(ix) * 0x9E3779B97F4A7C15ULL ^
                                        static_cast<std::uint64_t>(iy) * 0xC2B2AE3D27D4EB4FULL));
  return static_cast<double>(h >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

// World-anchored value noise in [-1, 1] on a 0.5 m lattice.
double ground_texture(double x, double y, std::uint64_t seed) {
  const double gx = x / 0.5, gy = y / 0.5;
  const double fx = std::floor(gx), fy = std::floor(gy);
  const long ix = static_cast<long>(fx), iy = static_cast<long>(fy);
  const double tx = gx - fx, ty = gy - fy;
  const double a = lattice(ix, iy, seed), b = lattice(ix + 1, iy, seed);
  const double c = lattice(ix, iy + 1, seed), d = lattice(ix + 1, iy + 1, seed);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

struct LocalSample {
  double fwd, right, heading;
};

}  // namespace

RenderedFrame render_frame(const TrackSpec& track, const VehicleState& state, const RenderOptions& options,
                           double s_hint) {
  const CameraModel& cam = options.camera;
  const ThemeProfile& prof = theme_profile(track.theme);
  const std::size_t h = cam.height, w = cam.width;
  RenderedFrame frame{Image(h, w, 3), SegmentationMap(h, w)};
  std::vector<double> depth(h * w, std::numeric_limits<double>::infinity());
  std::vector<double> texture(h * w, 0.0);

  const double horizon = cam.horizon_row + track.horizon_shift(s_hint);
  const double cth = std::cos(state.heading), sth = std::sin(state.heading);
  const double half_lane = 0.5 * track.lane_width;
  const double mark_half = 0.15;
  const double road_edge = half_lane + track.shoulder;

  // Centreline samples around the vehicle, expressed in the vehicle frame.
  const auto last = static_cast<long>(track.xs.size()) - 1;
  const long lo = std::clamp(static_cast<long>((s_hint - 15.0) / track.spacing), 0L, last);
  const long hi = std::clamp(static_cast<long>((s_hint + cam.max_range + 15.0) / track.spacing), 0L, last);
  std::vector<LocalSample> local;
  local.reserve(static_cast<std::size_t>(hi - lo + 1));
  for (long i = lo; i <= hi; ++i) {
    const double dx = track.xs[i] - state.x, dy = track.ys[i] - state.y;
    local.push_back({dx * cth + dy * sth, -dx * sth + dy * cth, track.headings[i] - state.heading});
  }
  constexpr long kCoarse = 4;
  const long n_local = static_cast<long>(local.size());

  auto lateral_offset = [&](double pf, double pr) {
    long best = 0;
    double best_d = 1e300;
    for (long i = 0; i < n_local; i += kCoarse) {
      const double df = pf - local[i].fwd, dr = pr - local[i].right;
      const double d = df * df + dr * dr;
      if (d < best_d) best_d = d, best = i;
    }
    const long a = std::max(0L, best - kCoarse), b = std::min(n_local - 1, best + kCoarse);
    for (long i = a; i <= b; ++i) {
      const double df = pf - local[i].fwd, dr = pr - local[i].right;
      const double d = df * df + dr * dr;
      if (d < best_d) best_d = d, best = i;
    }
    double offset = std::sqrt(best_d);
    double best_seg = 1e300;
    for (long i = std::max(0L, best - 1); i <= std::min(n_local - 2, best); ++i) {
      const double bf = local[i + 1].fwd - local[i].fwd, br = local[i + 1].right - local[i].right;
      const double t = std::clamp(((pf - local[i].fwd) * bf + (pr - local[i].right) * br) / (bf * bf + br * br), 0.0, 1.0);
      const double qf = local[i].fwd + t * bf, qr = local[i].right + t * br;
      const double d = (pf - qf) * (pf - qf) + (pr - qr) * (pr - qr);
      if (d < best_seg) {
        best_seg = d;
        const double hd = local[i].heading + t * (local[i + 1].heading - local[i].heading);
        offset = -(pf - qf) * std::sin(hd) + (pr - qr) * std::cos(hd);
      }
    }
    return offset;
  };

  const double cx = 0.5 * static_cast<double>(w);
  const std::uint64_t tex_seed = mix(track.seed + 17);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t k = r * w + c;
      if (r >= h - cam.hood_rows) {
        frame.seg.classes[k] = static_cast<std::uint8_t>(SceneClass::Vehicle);
        depth[k] = 0.0;
        continue;
      }
      const double v = static_cast<double>(r) + 0.5 - horizon;
      if (v <= 0.0) continue;  // sky
      const double d = cam.mount_height * cam.focal / v;
      const double lat = (static_cast<double>(c) + 0.5 - cx) * d / cam.focal;
      depth[k] = d;
      SceneClass cls = SceneClass::Pavement;
      if (d <= cam.max_range) {
        const double off = std::fabs(lateral_offset(d, lat));
        if (off >= half_lane - mark_half && off <= half_lane + mark_half) {
          cls = SceneClass::LaneMarking;
        } else if (off < road_edge) {
          cls = SceneClass::Road;
        }
      }
      frame.seg.classes[k] = static_cast<std::uint8_t>(cls);
      if (options.texture) {
        const double wx = state.x + d * cth - lat * sth;
        const double wy = state.y + d * sth + lat * cth;
        texture[k] = ground_texture(wx, wy, tex_seed);
      }
    }
  }

  if (options.scenery) {
    for (const Prop& p : track.props) {
      const double dx = p.x - state.x, dy = p.y - state.y;
      const double fwd = dx * cth + dy * sth;
      if (fwd < 1.0 || fwd > cam.max_range) continue;
      const double right = -dx * sth + dy * cth;
      const double col = cx + cam.focal * right / fwd;
      const double half = cam.focal * 0.5 * p.width / fwd;
      const double bottom = horizon + cam.focal * cam.mount_height / fwd;
      const double top = horizon - cam.focal * (p.height - cam.mount_height) / fwd;
      const long c0 = std::max(0L, static_cast<long>(std::ceil(col - half - 0.5)));
      const long c1 = std::min(static_cast<long>(w) - 1, static_cast<long>(std::floor(col + half - 0.5)));
      const long r0 = std::max(0L, static_cast<long>(std::ceil(top - 0.5)));
      const long r1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::floor(bottom - 0.5)));
      for (long r = r0; r <= r1; ++r) {
        for (long c = c0; c <= c1; ++c) {
          const std::size_t k = static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c);
          if (fwd < depth[k]) {
            depth[k] = fwd;
            frame.seg.classes[k] = static_cast<std::uint8_t>(p.cls);
            texture[k] = 0.0;
          }
        }
      }
    }
  }

  const double light = options.lighting ? track.lighting(s_hint) : 1.0;
  Rng noise_rng(options.noise_seed);
  for (std::size_t k = 0; k < h * w; ++k) {
    const Rgb& base = prof.palette[frame.seg.classes[k]];
    const double shade = light * (1.0 + options.texture_amplitude * texture[k]);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double value = base[ch] * (options.lighting || options.texture ? shade : 1.0);
      if (options.noise) value += options.noise_std * standard_normal(noise_rng);
      frame.rgb.pixels[3 * k + ch] =
          (options.lighting || options.texture || options.noise)
              ? static_cast<float>(std::clamp(value, 0.0, 1.0))
              : base[ch];
    }
  }
  return frame;
}

}  // namespace atn
