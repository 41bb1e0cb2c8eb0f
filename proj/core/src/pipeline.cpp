#include "atn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace atn {
namespace {

constexpr double kMphToMetersPerSecond = 1.0 / kMetersPerSecondToMph;

SegmentationMap crop_labels(const std::vector<std::uint8_t>& seg, std::size_t full_h, std::size_t w,
                            std::size_t top, std::size_t rows) {
  if (seg.size() != full_h * w) throw FormatError("record has no segmentation plane");
  SegmentationMap out(rows, w);
  std::copy_n(seg.data() + top * w, rows * w, out.classes.data());
  return out;
}

SegmentationMap mirror_labels(const SegmentationMap& m) {
  SegmentationMap out(m.height, m.width);
  for (std::size_t r = 0; r < m.height; ++r) {
    for (std::size_t c = 0; c < m.width; ++c) out.at(r, m.width - 1 - c) = m.at(r, c);
  }
  return out;
}

}  // namespace

Image PreparedData::image(std::size_t record) const {
  const std::size_t n = height * width * 3;
  return image_from_bytes(std::span<const std::uint8_t>(rgb.data() + record * n, n), height, width, 3);
}

SegmentationMap PreparedData::segmentation(std::size_t record, bool flipped) const {
  SegmentationMap m(height, width);
  const auto& src = flipped ? seg_flipped : seg;
  std::copy_n(src.data() + record * height * width, height * width, m.classes.data());
  return m;
}

FlowField PreparedData::flow(std::size_t record) const {
  FlowField f(height, width);
  const std::size_t hw = height * width;
  std::copy_n(flow_u.data() + record * hw, hw, f.u.data());
  std::copy_n(flow_v.data() + record * hw, hw, f.v.data());
  return f;
}

namespace {

PreparedData prepare_base(const Dataset& dataset, const PrepareConfig& config) {
  dataset.validate();
  config.augment.validate();
  PreparedData out;
  out.width = dataset.width;
  out.pad_top = config.pad_top;
  out.pad_bottom = config.pad_bottom;
  out.hz = dataset.hz;
  out.episode_offsets = dataset.episode_offsets();
  out.episode_of = dataset.episode_index();
  for (const auto& e : dataset.episodes) out.episode_themes.push_back(e.theme);
  out.height = static_cast<std::size_t>(std::floor(static_cast<double>(dataset.height) *
                                                   (1.0 - config.augment.crop_top - config.augment.crop_bottom)));
  const std::size_t n = dataset.records.size();
  out.rgb.reserve(n * out.height * out.width * 3);
  for (std::size_t i = 0; i < n; ++i) {
    const Image c = crop(dataset.image(i), config.augment.crop_top, config.augment.crop_bottom);
    if (c.height != out.height) throw ConfigError("crop produced an unexpected height");
    const auto bytes = image_to_bytes(c);
    out.rgb.insert(out.rgb.end(), bytes.begin(), bytes.end());
    out.steering.push_back(dataset.records[i].steering_deg);
    out.kinematics.push_back(dataset.records[i].kinematics);
  }
  return out;
}

}  // namespace

PreparedData prepare_data(const Dataset& dataset, const SegNet* segnet, const PrepareConfig& config) {
  PreparedData out = prepare_base(dataset, config);
  const std::size_t top = static_cast<std::size_t>(std::floor(static_cast<double>(dataset.height) * config.augment.crop_top));
  const std::size_t n = out.size();
  const std::size_t hw = out.height * out.width;
  out.seg.resize(n * hw);
  out.seg_flipped.resize(n * hw);
  out.flow_u.assign(n * hw, 0.0f);
  out.flow_v.assign(n * hw, 0.0f);

  // 256 images per chunk.
  constexpr std::size_t kChunk = 256;
  Image previous;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t end = std::min(n, start + kChunk);
    std::vector<Image> crops;
    for (std::size_t i = start; i < end; ++i) crops.push_back(out.image(i));
    if (segnet) {
      std::vector<Image> mirrored;
      for (const auto& c : crops) mirrored.push_back(mirror_horizontal(c));
      const auto a = infer_segmentation(*segnet, crops);
      const auto b = infer_segmentation(*segnet, mirrored);
      for (std::size_t i = 0; i < a.size(); ++i) {
        std::copy_n(a[i].classes.data(), hw, out.seg.data() + (start + i) * hw);
        std::copy_n(b[i].classes.data(), hw, out.seg_flipped.data() + (start + i) * hw);
      }
    } else {
      for (std::size_t i = start; i < end; ++i) {
        const SegmentationMap m = crop_labels(dataset.records[i].seg, dataset.height, dataset.width, top, out.height);
        std::copy_n(m.classes.data(), hw, out.seg.data() + i * hw);
        std::copy_n(mirror_labels(m).classes.data(), hw, out.seg_flipped.data() + i * hw);
      }
    }
    for (std::size_t i = start; i < end; ++i) {
      const Image& cur = crops[i - start];
      if (i > 0 && out.episode_of[i] == out.episode_of[i - 1]) {
        const Image& prev = i == start ? previous : crops[i - start - 1];
        const FlowField f = compute_flow(prev, cur, config.flow);
        std::copy_n(f.u.data(), hw, out.flow_u.data() + i * hw);
        std::copy_n(f.v.data(), hw, out.flow_v.data() + i * hw);
      }
    }
    previous = crops.back();
  }
  spdlog::debug("prepared {} records at {}x{} (+{} / +{} padding)", n, out.height, out.width, out.pad_top, out.pad_bottom);
  return out;
}

PreparedData prepare_data_cached(const Dataset& dataset, const SegNet* segnet, const PrepareConfig& config,
                                 const std::filesystem::path& cache_dir, std::string_view key) {
  const auto key_path = cache_dir / "key.txt";
  if (std::filesystem::exists(key_path)) {
    std::ifstream in(key_path, std::ios::binary);
    const std::string stored((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (stored == key) {
      PreparedData out = prepare_base(dataset, config);
      const std::size_t hw = out.height * out.width;
      auto load_seg = [&](const char* name, std::vector<std::uint8_t>& dst) {
        const auto maps = read_seg_cache(cache_dir / name);
        if (maps.size() != out.size()) throw FormatError(fmt::format("{} holds {} maps for {} records", name, maps.size(), out.size()));
        dst.resize(out.size() * hw);
        for (std::size_t i = 0; i < maps.size(); ++i) {
          if (maps[i].classes.size() != hw) throw FormatError(std::string(name) + " has the wrong map size");
          std::copy_n(maps[i].classes.data(), hw, dst.data() + i * hw);
        }
      };
      load_seg("seg.bin", out.seg);
      load_seg("seg_flipped.bin", out.seg_flipped);
      const auto flows = read_flow_cache(cache_dir / "flow.bin");
      if (flows.size() != out.size()) throw FormatError("flow cache does not match the dataset");
      out.flow_u.resize(out.size() * hw);
      out.flow_v.resize(out.size() * hw);
      for (std::size_t i = 0; i < flows.size(); ++i) {
        if (flows[i].u.size() != hw) throw FormatError("flow cache has the wrong field size");
        std::copy_n(flows[i].u.data(), hw, out.flow_u.data() + i * hw);
        std::copy_n(flows[i].v.data(), hw, out.flow_v.data() + i * hw);
      }
      spdlog::info("loaded segmentation and flow for {} records from {}", out.size(), cache_dir.string());
      return out;
    }
  }
  PreparedData out = prepare_data(dataset, segnet, config);
  std::filesystem::create_directories(cache_dir);
  std::filesystem::remove(key_path);
  std::vector<SegmentationMap> a, b;
  std::vector<FlowField> flows;
  for (std::size_t i = 0; i < out.size(); ++i) {
    a.push_back(out.segmentation(i, false));
    b.push_back(out.segmentation(i, true));
    flows.push_back(out.flow(i));
  }
  write_seg_cache(a, cache_dir / "seg.bin");
  write_seg_cache(b, cache_dir / "seg_flipped.bin");
  write_flow_cache(flows, cache_dir / "flow.bin");
  std::ofstream(key_path, std::ios::binary) << key;
  return out;
}

void assemble_frame(const Image& cropped_rgb, const SegmentationMap* seg, const FlowField* flow,
                    const AtnConfig& config, std::size_t pad_top, float* dst) {
  const std::size_t h = cropped_rgb.height, w = cropped_rgb.width;
  const std::size_t hp = config.input_height;
  if (w != config.input_width || pad_top + h > hp) {
    throw ConfigError(fmt::format("a {}x{} crop with {} padding rows does not fit the {}x{} model input", h, w, pad_top,
                                  hp, config.input_width));
  }
  const StackConfig stack = config.stack_config();
  const std::size_t c = stack.channels();
  std::vector<float> tmp(c * h * w);
  stack_channels_into(cropped_rgb, seg, flow, stack, tmp.data());
  std::fill_n(dst, c * hp * w, 0.0f);
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::copy_n(tmp.data() + ch * h * w, h * w, dst + ch * hp * w + pad_top * w);
  }
}

void assemble_batch(const PreparedData& data, const AtnConfig& config, std::span<const Provenance> samples,
                    Tensor& frames, Tensor& kinematics, std::vector<float>& targets) {
  const std::size_t w = config.effective_window();
  const std::size_t c = config.input_channels();
  const std::size_t frame_size = c * config.input_height * config.input_width;
  frames = Tensor({samples.size() * w, c, config.input_height, config.input_width});
  kinematics = Tensor({samples.size() * w, KinematicsVector::kSize});
  targets.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Provenance& s = samples[i];
    if (s.source_index >= data.size()) throw UsageError("sample refers to a record outside the prepared data");
    targets[i] = s.flipped ? -data.steering[s.source_index] : data.steering[s.source_index];
    const auto window = window_indices(s.source_index, data.episode_start(s.source_index), w);
    for (std::size_t k = 0; k < w; ++k) {
      const std::size_t j = window[k];
      Image img = data.image(j);
      if (s.flipped) img = mirror_horizontal(img);
      if (s.brightness_factor != 1.0) img = brightness_jitter(img, s.brightness_factor);
      const SegmentationMap seg = data.segmentation(j, s.flipped);
      FlowField flow = data.flow(j);
      if (s.flipped) flow = mirror_flow(flow);
      assemble_frame(img, &seg, &flow, config, data.pad_top, frames.data() + (i * w + k) * frame_size);
      const KinematicsVector kin = s.flipped ? data.kinematics[j].mirrored() : data.kinematics[j];
      const auto norm = normalize(kin);
      std::copy(norm.begin(), norm.end(), kinematics.data() + (i * w + k) * KinematicsVector::kSize);
    }
  }
}

Split split_by_episode(const PreparedData& data, double val_fraction, double test_fraction, std::uint64_t seed) {
  const std::size_t episodes = data.episode_offsets.size() - 1;
  if (!(val_fraction >= 0.0 && test_fraction >= 0.0 && val_fraction + test_fraction < 1.0)) {
    throw ConfigError("validation and test fractions must be non-negative and sum below 1");
  }
  std::vector<std::size_t> order(episodes);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "split.episodes"));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)), i - 1)]);
  }
  auto count = [&](double f) {
    return f > 0.0 ? std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f * static_cast<double>(episodes)))) : 0;
  };
  const std::size_t n_val = count(val_fraction), n_test = count(test_fraction);
  if (n_val + n_test >= episodes) {
    throw ConfigError(fmt::format("{} episodes cannot be split into {} validation and {} test episodes plus training",
                                  episodes, n_val, n_test));
  }
  std::vector<int> side(episodes, 0);
  for (std::size_t i = 0; i < n_val; ++i) side[order[i]] = 1;
  for (std::size_t i = n_val; i < n_val + n_test; ++i) side[order[i]] = 2;
  Split split;
  for (std::size_t r = 0; r < data.size(); ++r) {
    switch (side[data.episode_of[r]]) {
      case 0: split.train.push_back(r); break;
      case 1: split.val.push_back(r); break;
      default: split.test.push_back(r); break;
    }
  }
  return split;
}

PredictionSeries predict_series(const AtnModel& model, const PreparedData& data, const std::vector<std::size_t>& records) {
  const AtnConfig& config = model.config();
  const std::size_t w = config.effective_window();
  const std::size_t frame_size = config.input_channels() * config.input_height * config.input_width;
  const std::size_t d = model.context_width();
  PredictionSeries series;
  series.frame_dt = data.hz > 0.0 ? 1.0 / data.hz : 0.0;
  // Per-frame features are shared by the overlapping windows of a chunk.
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < records.size(); start += kChunk) {
    const std::size_t end = std::min(records.size(), start + kChunk);
    std::vector<std::size_t> frames;
    std::vector<std::vector<std::size_t>> windows;
    for (std::size_t i = start; i < end; ++i) {
      if (records[i] >= data.size()) throw UsageError("record index outside the prepared data");
      windows.push_back(window_indices(records[i], data.episode_start(records[i]), w));
      frames.insert(frames.end(), windows.back().begin(), windows.back().end());
    }
    std::sort(frames.begin(), frames.end());
    frames.erase(std::unique(frames.begin(), frames.end()), frames.end());
    Tensor x({frames.size(), config.input_channels(), config.input_height, config.input_width});
    Tensor kin({frames.size(), KinematicsVector::kSize});
    for (std::size_t f = 0; f < frames.size(); ++f) {
      const std::size_t j = frames[f];
      const Image img = data.image(j);
      const SegmentationMap seg = data.segmentation(j, false);
      const FlowField flow = data.flow(j);
      assemble_frame(img, &seg, &flow, config, data.pad_top, x.data() + f * frame_size);
      const auto norm = normalize(data.kinematics[j]);
      std::copy(norm.begin(), norm.end(), kin.data() + f * KinematicsVector::kSize);
    }
    const Tensor ctx = model.context(x, kin);
    Tensor steps({w, end - start, d});
    for (std::size_t i = 0; i < windows.size(); ++i) {
      for (std::size_t k = 0; k < w; ++k) {
        const auto row = static_cast<std::size_t>(std::lower_bound(frames.begin(), frames.end(), windows[i][k]) - frames.begin());
        std::copy_n(ctx.data() + row * d, d, steps.data() + (k * (end - start) + i) * d);
      }
    }
    const Tensor pred = model.head(steps);
    for (std::size_t i = start; i < end; ++i) {
      const std::size_t r = records[i];
      if (i == 0 || data.episode_of[r] != data.episode_of[records[i - 1]] || r != records[i - 1] + 1) {
        series.episode_starts.push_back(i);
      }
      series.truth.push_back(data.steering[r]);
      series.predicted.push_back(pred[i - start]);
      series.speed_mps.push_back(data.kinematics[r].speed_mph * kMphToMetersPerSecond);
    }
  }
  return series;
}

}  // namespace atn
