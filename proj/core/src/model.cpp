#include "atn/model.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace atn {
namespace {

std::string join(const std::vector<std::size_t>& v) { return fmt::format("{}", fmt::join(v, ",")); }

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || ptr != item.data() + item.size()) {
      throw ConfigError(fmt::format("{}: '{}' is not a list of non-negative integers", key, text));
    }
    out.push_back(v);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, text));
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError(fmt::format("{}: expected a non-negative integer, got '{}'", key, text));
  }
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError(fmt::format("{}: expected a number, got '{}'", key, text));
  }
  return v;
}

// [N*w, D] sample-major -> [w, N, D] step-major, and back.
Tensor to_steps(const Tensor& x, std::size_t w) {
  const std::size_t n = x.dim(0) / w, d = x.dim(1);
  Tensor out({w, n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < w; ++k) std::copy_n(x.data() + (i * w + k) * d, d, out.data() + (k * n + i) * d);
  }
  return out;
}

Tensor from_steps(const Tensor& s) {
  const std::size_t w = s.dim(0), n = s.dim(1), d = s.dim(2);
  Tensor out({n * w, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < w; ++k) std::copy_n(s.data() + (k * n + i) * d, d, out.data() + (i * w + k) * d);
  }
  return out;
}

Tensor concat_columns(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), da = a.dim(1), db = b.dim(1);
  Tensor out({n, da + db});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * da, da, out.data() + i * (da + db));
    std::copy_n(b.data() + i * db, db, out.data() + i * (da + db) + da);
  }
  return out;
}

Tensor leading_columns(const Tensor& x, std::size_t d) {
  const std::size_t n = x.dim(0), total = x.dim(1);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(x.data() + i * total, d, out.data() + i * d);
  return out;
}

}  // namespace

std::size_t AtnConfig::input_channels() const { return stack_config().channels(); }

StackConfig AtnConfig::stack_config() const {
  StackConfig s;
  s.segmentation = enable_segmentation;
  s.flow = enable_flow;
  s.seg_one_hot = seg_one_hot;
  s.max_flow = max_flow;
  return s;
}

void AtnConfig::validate() const {
  if (backbone != "base" && backbone != "pretext_transfer") {
    throw ConfigError(fmt::format("backbone must be base or pretext_transfer, got '{}'", backbone));
  }
  if (window == 0) throw ConfigError("window must be at least 1");
  const std::size_t layers = conv_depths.size();
  if (layers == 0 || kernel_sizes.size() != layers || strides.size() != layers || paddings.size() != layers) {
    throw ConfigError(fmt::format("conv_depths, kernel_sizes, strides and paddings must have one entry per layer "
                                  "(got {}, {}, {}, {})",
                                  layers, kernel_sizes.size(), strides.size(), paddings.size()));
  }
  long h = static_cast<long>(input_height), w = static_cast<long>(input_width);
  for (std::size_t i = 0; i < layers; ++i) {
    if (strides[i] == 0 || kernel_sizes[i] == 0 || conv_depths[i] == 0) {
      throw ConfigError(fmt::format("conv layer {} has a zero depth, kernel or stride", i + 1));
    }
    h = (h + 2 * static_cast<long>(paddings[i]) - static_cast<long>(kernel_sizes[i]));
    w = (w + 2 * static_cast<long>(paddings[i]) - static_cast<long>(kernel_sizes[i]));
    if (h < 0 || w < 0) {
      throw ConfigError(fmt::format("conv layer {} ({}x{} kernel) does not fit its input at {}x{} input resolution",
                                    i + 1, kernel_sizes[i], kernel_sizes[i], input_height, input_width));
    }
    h = h / static_cast<long>(strides[i]) + 1;
    w = w / static_cast<long>(strides[i]) + 1;
  }
  if (lstm_width == 0) throw ConfigError("lstm_width must be positive");
  for (auto f : fc_widths) {
    if (f == 0) throw ConfigError("fc widths must be positive");
  }
  if (!(conv_dropout >= 0.0 && conv_dropout < 1.0) || !(fc_dropout >= 0.0 && fc_dropout < 1.0)) {
    throw ConfigError("dropout rates must lie in [0, 1)");
  }
  if (!(max_flow > 0.0)) throw ConfigError("max_flow must be positive");
  if (!(output_scale > 0.0)) throw ConfigError("output_scale must be positive");
}

void AtnConfig::check_channels(std::size_t actual) const {
  const std::size_t expected = input_channels();
  if (actual != expected) {
    throw ConfigError(fmt::format("input has {} channels but the model expects {} (3 RGB{}{})", actual, expected,
                                  enable_segmentation ? (seg_one_hot ? " + 9 segmentation" : " + 1 segmentation") : "",
                                  enable_flow ? " + 2 flow" : ""));
  }
}

KeyValues AtnConfig::to_kv() const {
  return {
      {"enable_segmentation", enable_segmentation ? "true" : "false"},
      {"enable_flow", enable_flow ? "true" : "false"},
      {"enable_lstm", enable_lstm ? "true" : "false"},
      {"enable_kinematics", enable_kinematics ? "true" : "false"},
      {"seg_one_hot", seg_one_hot ? "true" : "false"},
      {"backbone", backbone},
      {"window", std::to_string(window)},
      {"input_height", std::to_string(input_height)},
      {"input_width", std::to_string(input_width)},
      {"conv_depths", join(conv_depths)},
      {"kernel_sizes", join(kernel_sizes)},
      {"strides", join(strides)},
      {"paddings", join(paddings)},
      {"lstm_width", std::to_string(lstm_width)},
      {"fc_widths", join(fc_widths)},
      {"conv_dropout", fmt::format("{}", conv_dropout)},
      {"fc_dropout", fmt::format("{}", fc_dropout)},
      {"max_flow", fmt::format("{}", max_flow)},
      {"output_scale", fmt::format("{}", output_scale)},
  };
}

AtnConfig AtnConfig::from_kv(const KeyValues& kv) {
  AtnConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "enable_segmentation") c.enable_segmentation = parse_bool(k, v);
    else if (k == "enable_flow") c.enable_flow = parse_bool(k, v);
    else if (k == "enable_lstm") c.enable_lstm = parse_bool(k, v);
    else if (k == "enable_kinematics") c.enable_kinematics = parse_bool(k, v);
    else if (k == "seg_one_hot") c.seg_one_hot = parse_bool(k, v);
    else if (k == "backbone") c.backbone = v;
    else if (k == "window") c.window = parse_size(k, v);
    else if (k == "input_height") c.input_height = parse_size(k, v);
    else if (k == "input_width") c.input_width = parse_size(k, v);
    else if (k == "conv_depths") c.conv_depths = parse_list(k, v);
    else if (k == "kernel_sizes") c.kernel_sizes = parse_list(k, v);
    else if (k == "strides") c.strides = parse_list(k, v);
    else if (k == "paddings") c.paddings = parse_list(k, v);
    else if (k == "lstm_width") c.lstm_width = parse_size(k, v);
    else if (k == "fc_widths") c.fc_widths = parse_list(k, v);
    else if (k == "conv_dropout") c.conv_dropout = parse_double(k, v);
    else if (k == "fc_dropout") c.fc_dropout = parse_double(k, v);
    else if (k == "max_flow") c.max_flow = parse_double(k, v);
    else if (k == "output_scale") c.output_scale = parse_double(k, v);
    else throw ConfigError(fmt::format("unknown model config key '{}'", k));
  }
  c.validate();
  return c;
}

AtnConfig AtnConfig::variant(std::string_view name) {
  AtnConfig c;
  if (name == "baseline") {
    c.enable_segmentation = c.enable_flow = c.enable_lstm = c.enable_kinematics = false;
  } else if (name == "no_seg") {
    c.enable_segmentation = false;
  } else if (name == "no_lstm") {
    c.enable_lstm = false;
  } else if (name == "no_flow") {
    c.enable_flow = false;
  } else if (name == "no_kin") {
    c.enable_kinematics = false;
  } else if (name == "atn_transfer") {
    c.backbone = "pretext_transfer";
  } else if (name != "atn_base") {
    throw ConfigError(fmt::format("unknown variant '{}' (expected one of {})", name, fmt::join(kVariantNames, ", ")));
  }
  return c;
}

Backbone::Backbone(const AtnConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "backbone.init"));
  input_shape_ = {config.input_channels(), config.input_height, config.input_width};
  Shape shape{1, config.input_channels(), config.input_height, config.input_width};
  std::size_t in = config.input_channels();
  for (std::size_t i = 0; i < config.conv_depths.size(); ++i) {
    const std::string name = fmt::format("backbone.conv{}", i + 1);
    convs_.emplace_back(name, Conv2dSpec{in, config.conv_depths[i], config.kernel_sizes[i], config.strides[i],
                                         config.paddings[i]});
    convs_.back().init(rng);
    norms_.emplace_back(fmt::format("backbone.bn{}", i + 1), config.conv_depths[i]);
    drops_.emplace_back(config.conv_dropout, derive_seed(seed, fmt::format("backbone.dropout{}", i + 1)));
    relus_.emplace_back();
    shape = convs_.back().output_shape(shape);
    in = config.conv_depths[i];
  }
  output_shape_ = {shape[1], shape[2], shape[3]};
}

Tensor Backbone::forward(const Tensor& x, Mode mode) {
  Tensor a = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    a = relus_[i].forward(drops_[i].forward(norms_[i].forward(convs_[i].forward(a), mode), mode));
  }
  a.reshape({x.dim(0), feature_size()});
  return a;
}

Tensor Backbone::infer(const Tensor& x) const {
  Tensor a = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) a = relu(norms_[i].infer(convs_[i].infer(a)));
  a.reshape({x.dim(0), feature_size()});
  return a;
}

void Backbone::backward(const Tensor& d_features) {
  Tensor d = d_features;
  d.reshape({d_features.dim(0), output_shape_[0], output_shape_[1], output_shape_[2]});
  for (std::size_t i = convs_.size(); i-- > 0;) {
    const Tensor d_conv = norms_[i].backward(drops_[i].backward(relus_[i].backward(d)));
    if (i == 0) convs_[i].backward_weights(d_conv);
    else d = convs_[i].backward(d_conv);
  }
}

void Backbone::reseed_dropout(std::uint64_t seed) {
  for (std::size_t i = 0; i < drops_.size(); ++i) drops_[i].reseed(derive_seed(seed, fmt::format("backbone.dropout{}", i + 1)));
}

void Backbone::collect(ParamRefs<float>& out) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect(out);
    norms_[i].collect(out);
  }
}

void Backbone::collect_buffers(BufferRefs<float>& out) {
  for (auto& n : norms_) n.collect_buffers(out);
}

AtnModel::AtnModel(AtnConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed), backbone_(config_, seed) {
  Rng rng(derive_seed(seed, "head.init"));
  std::size_t width = context_width();
  if (config_.enable_lstm) {
    lstm_ = Lstm<float>("lstm", width, config_.lstm_width);
    lstm_.init(rng);
    width = config_.lstm_width;
  }
  for (std::size_t i = 0; i < config_.fc_widths.size(); ++i) {
    fc_.emplace_back(fmt::format("fc{}", i + 1), width, config_.fc_widths[i]);
    fc_.back().init(rng);
    fc_relu_.emplace_back();
    fc_drop_.emplace_back(config_.fc_dropout, derive_seed(seed, fmt::format("fc.dropout{}", i + 1)));
    width = config_.fc_widths[i];
  }
  out_ = Linear<float>("out", width, 1);
  out_.init(rng, 0.01);
}

std::size_t AtnModel::context_width() const {
  return backbone_.feature_size() + (config_.enable_kinematics ? KinematicsVector::kSize : 0);
}

void AtnModel::check_frames(const Tensor& frames, const Tensor& kinematics) const {
  if (frames.rank() != 4) throw UsageError("frames must be [N*w, C, H, W], got " + shape_string(frames.shape()));
  config_.check_channels(frames.dim(1));
  if (frames.dim(2) != config_.input_height || frames.dim(3) != config_.input_width) {
    throw ConfigError(fmt::format("frames are {}x{} but the model expects {}x{}", frames.dim(2), frames.dim(3),
                                  config_.input_height, config_.input_width));
  }
  const std::size_t w = config_.effective_window();
  if (frames.dim(0) == 0 || frames.dim(0) % w != 0) {
    throw UsageError(fmt::format("{} frames do not form whole windows of length {}", frames.dim(0), w));
  }
  if (config_.enable_kinematics &&
      (kinematics.rank() != 2 || kinematics.dim(0) != frames.dim(0) || kinematics.dim(1) != KinematicsVector::kSize)) {
    throw UsageError(fmt::format("kinematics must be [{}, 5], got {}", frames.dim(0), shape_string(kinematics.shape())));
  }
}

Tensor AtnModel::forward(const Tensor& frames, const Tensor& kinematics, Mode mode) {
  check_frames(frames, kinematics);
  const std::size_t w = config_.effective_window();
  batch_ = frames.dim(0) / w;
  Tensor x = backbone_.forward(frames, mode);
  if (config_.enable_kinematics) x = concat_columns(x, kinematics);
  if (config_.enable_lstm) x = lstm_.forward(to_steps(x, w));
  for (std::size_t i = 0; i < fc_.size(); ++i) x = fc_drop_[i].forward(fc_relu_[i].forward(fc_[i].forward(x)), mode);
  Tensor y = tanh_.forward(out_.forward(x));
  for (auto& v : y.values()) v *= static_cast<float>(config_.output_scale);
  return y;
}

void AtnModel::backward(const Tensor& d_output) {
  if (d_output.size() != batch_) throw UsageError("output gradient does not match the last forward batch");
  Tensor d = d_output;
  d.reshape({batch_, 1});
  for (auto& v : d.values()) v *= static_cast<float>(config_.output_scale);
  d = out_.backward(tanh_.backward(d));
  for (std::size_t i = fc_.size(); i-- > 0;) d = fc_[i].backward(fc_relu_[i].backward(fc_drop_[i].backward(d)));
  if (config_.enable_lstm) d = from_steps(lstm_.backward(d));
  if (config_.enable_kinematics) d = leading_columns(d, backbone_.feature_size());
  backbone_.backward(d);
}

Tensor AtnModel::context(const Tensor& frames, const Tensor& kinematics) const {
  if (frames.rank() != 4) throw UsageError("frames must be [M, C, H, W]");
  config_.check_channels(frames.dim(1));
  Tensor x = backbone_.infer(frames);
  if (config_.enable_kinematics) {
    if (kinematics.rank() != 2 || kinematics.dim(0) != frames.dim(0) || kinematics.dim(1) != KinematicsVector::kSize) {
      throw UsageError("kinematics must be [M, 5]");
    }
    x = concat_columns(x, kinematics);
  }
  return x;
}

Tensor AtnModel::head(const Tensor& contexts) const {
  const std::size_t w = config_.effective_window();
  if (contexts.rank() != 3 || contexts.dim(0) != w || contexts.dim(2) != context_width()) {
    throw UsageError(fmt::format("context window must be [{}, N, {}], got {}", w, context_width(),
                                 shape_string(contexts.shape())));
  }
  Tensor x;
  if (config_.enable_lstm) {
    x = lstm_.infer(contexts);
  } else {
    x = contexts;
    x.reshape({contexts.dim(1), contexts.dim(2)});
  }
  for (const auto& fc : fc_) x = relu(fc.infer(x));
  Tensor y = tanh(out_.infer(x));
  for (auto& v : y.values()) v *= static_cast<float>(config_.output_scale);
  return y;
}

Tensor AtnModel::predict(const Tensor& frames, const Tensor& kinematics) const {
  check_frames(frames, kinematics);
  const std::size_t w = config_.effective_window();
  const Tensor ctx = context(frames, kinematics);
  return head(to_steps(ctx, w));
}

void AtnModel::reseed_dropout(std::uint64_t seed) {
  backbone_.reseed_dropout(seed);
  for (std::size_t i = 0; i < fc_drop_.size(); ++i) fc_drop_[i].reseed(derive_seed(seed, fmt::format("fc.dropout{}", i + 1)));
}

ParamRefs<float> AtnModel::parameters() {
  ParamRefs<float> out;
  backbone_.collect(out);
  if (config_.enable_lstm) lstm_.collect(out);
  for (auto& fc : fc_) fc.collect(out);
  out_.collect(out);
  return out;
}

BufferRefs<float> AtnModel::buffers() {
  BufferRefs<float> out;
  backbone_.collect_buffers(out);
  return out;
}

std::size_t AtnModel::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

Checkpoint AtnModel::to_checkpoint(bool optimizer_state) {
  Checkpoint c;
  c.kind = "atn";
  c.seed = seed_;
  c.config = config_.to_kv();
  store_parameters(c, parameters(), buffers(), optimizer_state);
  return c;
}

void AtnModel::load(const Checkpoint& checkpoint, bool optimizer_state) {
  if (checkpoint.kind != "atn") throw FormatError(fmt::format("expected an atn checkpoint, got '{}'", checkpoint.kind));
  verify_config(checkpoint, config_.to_kv());
  load_parameters(checkpoint, parameters(), buffers(), optimizer_state);
}

void AtnModel::load_backbone(const Checkpoint& checkpoint) {
  if (checkpoint.kind != "pretext") {
    throw FormatError(fmt::format("expected a pretext checkpoint, got '{}'", checkpoint.kind));
  }
  ParamRefs<float> params;
  BufferRefs<float> bufs;
  backbone_.collect(params);
  backbone_.collect_buffers(bufs);
  load_parameters(checkpoint, params, bufs, false);
}

std::vector<std::size_t> window_indices(std::size_t t, std::size_t episode_start, std::size_t w) {
  if (w == 0) throw UsageError("window length must be positive");
  if (t < episode_start) throw UsageError("record precedes its episode start");
  std::vector<std::size_t> out(w);
  for (std::size_t k = 0; k < w; ++k) {
    const std::size_t back = w - 1 - k;
    out[k] = t - std::min(back, t - episode_start);
  }
  return out;
}

std::vector<std::vector<std::size_t>> make_windows(const std::vector<std::size_t>& episode_offsets, std::size_t w) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t e = 0; e + 1 < episode_offsets.size(); ++e) {
    for (std::size_t t = episode_offsets[e]; t < episode_offsets[e + 1]; ++t) {
      out.push_back(window_indices(t, episode_offsets[e], w));
    }
  }
  return out;
}

}  // namespace atn
