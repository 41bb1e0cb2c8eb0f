#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "atn/image.hpp"
#include "atn/layers.hpp"
#include "atn/scene.hpp"

namespace atn {

// Dense motion in pixels per frame; positive u points right, positive v down.
struct FlowField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> u;
  std::vector<float> v;

  FlowField() = default;
  FlowField(std::size_t h, std::size_t w) : height(h), width(w), u(h * w, 0.0f), v(h * w, 0.0f) {}

  friend bool operator==(const FlowField&, const FlowField&) = default;
};

struct FlowConfig {
  double alpha = 10.0;   // smoothness weight on a [0, 255] intensity scale
  int iterations = 100;  // per pyramid level
  int levels = 3;

  void validate() const;
};

// Coarse-to-fine Horn-Schunck with warping. Inputs are converted to
// grayscale internally; borders replicate.
FlowField compute_flow(const Image& prev, const Image& next, const FlowConfig& config = {});

// Flow of the mirrored frame pair: columns reversed and u negated.
FlowField mirror_flow(const FlowField& flow);

// Tiny encoder-decoder: two full-resolution convs around one stride-2
// stage, nearest upsampling and a skip connection, 9-way logits per pixel.
class SegNet {
 public:
  static constexpr std::size_t kDownsample = 2;

  explicit SegNet(std::uint64_t seed = 0);

  // x: [N, 3, H, W] in [0, 1]. Returns logits [N, 9, H, W].
  Tensor forward(const Tensor& x, Mode mode);
  Tensor infer(const Tensor& x) const;
  void backward(const Tensor& d_logits);

  ParamRefs<float> parameters();
  BufferRefs<float> buffers();
  std::size_t parameter_count();

 private:
  Conv2d<float> conv1_, conv2_, conv3_, conv4_, head_;
  BatchNorm<float> bn1_, bn2_, bn3_, bn4_;
  Relu<float> r1_, r2_, r3_, r4_;
};

struct SegTrainConfig {
  int epochs = 12;
  std::size_t batch_size = 16;
  double learning_rate = 3e-3;
  std::uint64_t seed = 0;
};

struct SegTrainReport {
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
};

// Requires at least 200 frames. Classes missing from the labels are
// reported but stay in the output space.
SegNet train_segmentation(const std::vector<Image>& images, const std::vector<SegmentationMap>& labels,
                          const SegTrainConfig& config, SegTrainReport* report = nullptr);

SegmentationMap infer_segmentation(const SegNet& model, const Image& image);
std::vector<SegmentationMap> infer_segmentation(const SegNet& model, const std::vector<Image>& images);

double pixel_accuracy(const SegmentationMap& predicted, const SegmentationMap& truth);

// HWC image -> CHW floats written to dst.
void image_to_chw(const Image& image, float* dst);

struct StackConfig {
  bool segmentation = true;
  bool flow = true;
  bool seg_one_hot = false;
  double max_flow = 8.0;  // px/frame; larger magnitudes are clamped

  std::size_t channels() const { return 3 + (segmentation ? (seg_one_hot ? kNumSceneClasses : 1) : 0) + (flow ? 2 : 0); }
};

// Channel order R, G, B, seg, u, v. seg is id/8 (or one-hot), flow is
// divided by max_flow after clamping. Writes channels() * H * W floats.
void stack_channels_into(const Image& image, const SegmentationMap* seg, const FlowField* flow,
                         const StackConfig& config, float* dst);
// Returns [C, H, W].
Tensor stack_channels(const Image& image, const SegmentationMap* seg, const FlowField* flow,
                      const StackConfig& config = {});

// Cache files: 16-byte header (magic "ATNC", dtype code u32, H u32, W u32)
// followed by little-endian planes.
void write_seg_cache(const std::vector<SegmentationMap>& maps, const std::filesystem::path& path);
std::vector<SegmentationMap> read_seg_cache(const std::filesystem::path& path);
void write_flow_cache(const std::vector<FlowField>& flows, const std::filesystem::path& path);
std::vector<FlowField> read_flow_cache(const std::filesystem::path& path);

}  // namespace atn
