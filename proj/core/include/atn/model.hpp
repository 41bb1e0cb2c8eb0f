#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "atn/checkpoint.hpp"
#include "atn/kinematics.hpp"
#include "atn/layers.hpp"
#include "atn/vision.hpp"

namespace atn {

struct AtnConfig {
  bool enable_segmentation = true;
  bool enable_flow = true;
  bool enable_lstm = true;
  bool enable_kinematics = true;
  bool seg_one_hot = false;
  std::string backbone = "base";  // base | pretext_transfer
  std::size_t window = 3;
  std::size_t input_height = 48;
  std::size_t input_width = 64;
  std::vector<std::size_t> conv_depths{24, 36, 48, 64, 64};
  std::vector<std::size_t> kernel_sizes{5, 5, 5, 3, 3};
  std::vector<std::size_t> strides{2, 2, 2, 1, 1};
  std::vector<std::size_t> paddings{0, 0, 0, 1, 1};
  std::size_t lstm_width = 128;
  std::vector<std::size_t> fc_widths{256, 128, 64};
  double conv_dropout = 0.2;
  double fc_dropout = 0.5;
  double max_flow = 8.0;
  double output_scale = 90.0;

  std::size_t input_channels() const;
  std::size_t effective_window() const { return enable_lstm ? window : 1; }
  StackConfig stack_config() const;
  // Throws ConfigError on inconsistent settings, including conv stacks that
  // collapse the feature map.
  void validate() const;
  // Checks a tensor's channel count against the enabled inputs.
  void check_channels(std::size_t actual) const;

  KeyValues to_kv() const;
  // Unknown keys are rejected; missing keys keep their defaults.
  static AtnConfig from_kv(const KeyValues& kv);
  std::uint64_t hash() const { return config_hash(to_kv()); }

  // Named ablation rows: baseline, no_seg, no_lstm, no_flow, no_kin,
  // atn_base, atn_transfer.
  static AtnConfig variant(std::string_view name);
};

inline constexpr std::array<std::string_view, 7> kVariantNames{"baseline", "no_seg", "no_lstm", "no_flow",
                                                               "no_kin",   "atn_base", "atn_transfer"};

// Convolutional feature extractor: conv -> batchnorm -> dropout -> ReLU per
// layer, flattened to [M, feature_size].
class Backbone {
 public:
  Backbone() = default;
  Backbone(const AtnConfig& config, std::uint64_t seed);

  Shape output_shape() const { return output_shape_; }
  std::size_t feature_size() const { return shape_size(output_shape_); }

  Tensor forward(const Tensor& x, Mode mode);
  Tensor infer(const Tensor& x) const;
  // Parameter gradients only; the input gradient is not needed.
  void backward(const Tensor& d_features);
  void reseed_dropout(std::uint64_t seed);

  void collect(ParamRefs<float>& out);
  void collect_buffers(BufferRefs<float>& out);

 private:
  std::vector<Conv2d<float>> convs_;
  std::vector<BatchNorm<float>> norms_;
  std::vector<Dropout<float>> drops_;
  std::vector<Relu<float>> relus_;
  Shape input_shape_;   // [C, H, W]
  Shape output_shape_;  // [C, H, W]
};

class AtnModel {
 public:
  AtnModel(AtnConfig config, std::uint64_t seed);

  const AtnConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  Backbone& backbone() { return backbone_; }
  std::size_t context_width() const;

  // frames: [N*w, C, H, W], sample-major with each window oldest first;
  // kinematics: [N*w, 5] normalized. Returns [N, 1] degrees.
  Tensor forward(const Tensor& frames, const Tensor& kinematics, Mode mode);
  void backward(const Tensor& d_output);
  Tensor predict(const Tensor& frames, const Tensor& kinematics) const;

  // Per-frame context features [M, D] (infer mode); kinematics ignored when
  // disabled.
  Tensor context(const Tensor& frames, const Tensor& kinematics) const;
  // contexts: [w, N, D] oldest first (w = effective_window()). Returns [N, 1].
  Tensor head(const Tensor& contexts) const;

  void reseed_dropout(std::uint64_t seed);
  ParamRefs<float> parameters();
  BufferRefs<float> buffers();
  std::size_t parameter_count();

  Checkpoint to_checkpoint(bool optimizer_state);
  // Verifies the config hash before loading.
  void load(const Checkpoint& checkpoint, bool optimizer_state);
  // Copies backbone parameters and statistics saved by pretext training.
  void load_backbone(const Checkpoint& checkpoint);

 private:
  void check_frames(const Tensor& frames, const Tensor& kinematics) const;

  AtnConfig config_;
  std::uint64_t seed_;
  Backbone backbone_;
  Lstm<float> lstm_;
  std::vector<Linear<float>> fc_;
  std::vector<Relu<float>> fc_relu_;
  std::vector<Dropout<float>> fc_drop_;
  Linear<float> out_;
  Tanh<float> tanh_;
  std::size_t batch_ = 0;
};

// Frame indices of the window ending at record t:
// [max(start, t-w+1), ..., max(start, t-1), t] with start the first record of
// t's episode.
std::vector<std::size_t> window_indices(std::size_t t, std::size_t episode_start, std::size_t w);

// Windows for every record of a dataset given its episode offsets (first
// record of each episode plus one past the end).
std::vector<std::vector<std::size_t>> make_windows(const std::vector<std::size_t>& episode_offsets, std::size_t w);

}  // namespace atn
