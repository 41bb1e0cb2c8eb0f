#include "atn/augment.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace atn {

void AugmentConfig::validate() const {
  if (!(crop_top >= 0.0 && crop_top < 0.5) || !(crop_bottom >= 0.0 && crop_bottom < 0.5) ||
      !(crop_top + crop_bottom < 1.0)) {
    throw ConfigError(fmt::format("crop fractions top={} bottom={} must lie in [0, 0.5)", crop_top, crop_bottom));
  }
  if (!literal_brightness_range && !(brightness_min > 0.0 && brightness_max >= brightness_min)) {
    throw ConfigError("brightness range must be positive and ordered");
  }
  if (!(target_hz > 0.0)) throw ConfigError("target_hz must be positive");
}

Image crop(const Image& image, double top_fraction, double bottom_fraction) {
  if (!(top_fraction >= 0.0 && top_fraction < 0.5) || !(bottom_fraction >= 0.0 && bottom_fraction < 0.5)) {
    throw ConfigError(fmt::format("crop fractions {} / {} outside [0, 0.5)", top_fraction, bottom_fraction));
  }
  const auto h = static_cast<double>(image.height);
  const auto top = static_cast<std::size_t>(std::floor(h * top_fraction));
  const auto rows = static_cast<std::size_t>(std::floor(h * (1.0 - top_fraction - bottom_fraction)));
  Image out(rows, image.width, image.channels);
  const std::size_t stride = image.width * image.channels;
  std::copy(image.pixels.begin() + static_cast<std::ptrdiff_t>(top * stride),
            image.pixels.begin() + static_cast<std::ptrdiff_t>((top + rows) * stride), out.pixels.begin());
  return out;
}

Image brightness_jitter(const Image& image, double factor) {
  if (!(factor > 0.0)) throw ConfigError(fmt::format("brightness factor {} must be positive", factor));
  if (image.channels != 3) throw ConfigError("brightness_jitter expects an RGB image");
  Image out = image;
  const auto f = static_cast<float>(factor);
  for (std::size_t i = 0; i < image.height * image.width; ++i) {
    float* px = &out.pixels[3 * i];
    Hsv hsv = rgb_to_hsv(px[0], px[1], px[2]);
    hsv.v = std::clamp(hsv.v * f, 0.0f, 1.0f);
    hsv_to_rgb(hsv, px[0], px[1], px[2]);
  }
  return out;
}

double draw_brightness(Rng& rng, const AugmentConfig& config) {
  if (config.literal_brightness_range) {
    // (0, 10]: a zero factor is not a valid brightness.
    return 10.0 * (1.0 - uniform01(rng));
  }
  return uniform(rng, config.brightness_min, config.brightness_max);
}

AugmentedSample horizontal_flip(const AugmentedSample& sample) {
  AugmentedSample out;
  out.image = mirror_horizontal(sample.image);
  out.steering_deg = -sample.steering_deg;
  out.kinematics = sample.kinematics.mirrored();
  out.provenance = sample.provenance;
  out.provenance.flipped = !sample.provenance.flipped;
  return out;
}

int upsample_copies(double steering_deg) {
  const double a = std::fabs(steering_deg);
  if (a > 10.0) return 10;
  if (a > 5.0) return 5;
  return 1;
}

std::vector<AugmentedSample> upsample_by_angle(const std::vector<AugmentedSample>& dataset, std::uint64_t seed) {
  return upsample_by_angle(
      dataset, [](const AugmentedSample& s) { return static_cast<double>(s.steering_deg); },
      [](AugmentedSample& s, std::size_t c) { s.provenance.copy_index = c; }, seed);
}

std::vector<Provenance> build_augmentation_plan(const Dataset& dataset, const std::vector<std::size_t>& indices,
                                                const AugmentConfig& config, std::uint64_t seed) {
  std::vector<float> steering(dataset.records.size());
  for (std::size_t i = 0; i < steering.size(); ++i) steering[i] = dataset.records[i].steering_deg;
  return build_augmentation_plan(steering, indices, config, seed);
}

std::vector<Provenance> build_augmentation_plan(std::span<const float> steering, const std::vector<std::size_t>& indices,
                                                const AugmentConfig& config, std::uint64_t seed) {
  config.validate();
  struct Entry {
    Provenance p;
    double angle;
  };
  std::vector<Entry> base;
  for (std::size_t idx : indices) {
    if (idx >= steering.size()) throw UsageError("augmentation index outside the dataset");
    const double a = steering[idx];
    base.push_back({{idx, false, 1.0, 0}, a});
    if (config.flip) base.push_back({{idx, true, 1.0, 0}, -a});
  }
  std::vector<Entry> expanded;
  if (config.upsample) {
    expanded = upsample_by_angle(
        base, [](const Entry& e) { return e.angle; }, [](Entry& e, std::size_t c) { e.p.copy_index = c; },
        derive_seed(seed, "augment.shuffle"));
  } else {
    expanded = std::move(base);
    Rng rng(derive_seed(seed, "augment.shuffle"));
    for (std::size_t i = expanded.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
      std::swap(expanded[i - 1], expanded[std::min(j, i - 1)]);
    }
  }
  Rng brightness_rng(derive_seed(seed, "augment.brightness"));
  std::vector<Provenance> plan;
  plan.reserve(expanded.size());
  for (auto& e : expanded) {
    e.p.brightness_factor = draw_brightness(brightness_rng, config);
    plan.push_back(e.p);
  }
  return plan;
}

AugmentedSample materialize(const Dataset& dataset, const Provenance& entry, const AugmentConfig& config) {
  const Record& r = dataset.records.at(entry.source_index);
  AugmentedSample s;
  s.image = crop(dataset.image(entry.source_index), config.crop_top, config.crop_bottom);
  s.steering_deg = r.steering_deg;
  s.kinematics = r.kinematics;
  s.provenance = {entry.source_index, false, 1.0, entry.copy_index};
  if (entry.flipped) s = horizontal_flip(s);
  s.image = brightness_jitter(s.image, entry.brightness_factor);
  s.provenance.brightness_factor = entry.brightness_factor;
  return s;
}

Dataset materialize_dataset(const Dataset& dataset, const std::vector<Provenance>& plan,
                            const AugmentConfig& config) {
  Dataset out;
  out.width = dataset.width;
  out.hz = dataset.hz;
  out.seeds = dataset.seeds;
  for (const auto& entry : plan) {
    AugmentedSample s = materialize(dataset, entry, config);
    out.height = s.image.height;
    Image seg(dataset.height, dataset.width, 1);
    const Record& src = dataset.records[entry.source_index];
    for (std::size_t i = 0; i < src.seg.size(); ++i) seg.pixels[i] = src.seg[i];
    seg = crop(seg, config.crop_top, config.crop_bottom);
    if (entry.flipped) seg = mirror_horizontal(seg);
    Record r;
    r.timestamp = src.timestamp;
    r.steering_deg = s.steering_deg;
    r.kinematics = s.kinematics;
    r.image = image_to_bytes(s.image);
    r.seg.resize(seg.pixels.size());
    for (std::size_t i = 0; i < seg.pixels.size(); ++i) r.seg[i] = static_cast<std::uint8_t>(seg.pixels[i]);
    out.records.push_back(std::move(r));
  }
  // Shuffled samples carry no temporal order: each is its own episode.
  out.episodes.assign(out.records.size(), EpisodeInfo{1, "augmented", 0});
  if (out.records.empty()) {
    out.height = crop(Image(dataset.height, 1, 1), config.crop_top, config.crop_bottom).height;
  }
  return out;
}

void write_provenance(const std::vector<Provenance>& plan, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& p : plan) {
    out << fmt::format("{} {} {} {}\n", p.source_index, p.flipped ? 1 : 0, p.brightness_factor, p.copy_index);
  }
}

std::vector<Provenance> read_provenance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::vector<Provenance> plan;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Provenance p;
    int flip = 0;
    std::string brightness;
    ls >> p.source_index >> flip >> brightness >> p.copy_index;
    if (ls.fail()) throw FormatError("malformed provenance line: " + line);
    auto [ptr, ec] = std::from_chars(brightness.data(), brightness.data() + brightness.size(), p.brightness_factor);
    if (ec != std::errc{}) throw FormatError("malformed brightness in provenance: " + brightness);
    p.flipped = flip != 0;
    plan.push_back(p);
  }
  return plan;
}

}  // namespace atn
