#include "atn/vision.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "atn/binary_io.hpp"
#include "atn/optim.hpp"

namespace atn {
namespace {

struct Plane {
  std::size_t h = 0, w = 0;
  std::vector<double> d;

  Plane() = default;
  Plane(std::size_t hh, std::size_t ww, double fill = 0.0) : h(hh), w(ww), d(hh * ww, fill) {}
  double& operator()(std::size_t r, std::size_t c) { return d[r * w + c]; }
  double operator()(std::size_t r, std::size_t c) const { return d[r * w + c]; }
  double clamped(long r, long c) const {
    r = std::clamp(r, 0L, static_cast<long>(h) - 1);
    c = std::clamp(c, 0L, static_cast<long>(w) - 1);
    return d[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)];
  }
  double bilinear(double r, double c) const {
    r = std::clamp(r, 0.0, static_cast<double>(h - 1));
    c = std::clamp(c, 0.0, static_cast<double>(w - 1));
    const double fr = std::floor(r), fc = std::floor(c);
    const double tr = r - fr, tc = c - fc;
    const long r0 = static_cast<long>(fr), c0 = static_cast<long>(fc);
    const double a = clamped(r0, c0), b = clamped(r0, c0 + 1);
    const double e = clamped(r0 + 1, c0), f = clamped(r0 + 1, c0 + 1);
    return (a * (1 - tc) + b * tc) * (1 - tr) + (e * (1 - tc) + f * tc) * tr;
  }
};

Plane luminance(const Image& img) {
  const Image g = grayscale(img);
  Plane p(img.height, img.width);
  for (std::size_t i = 0; i < p.d.size(); ++i) p.d[i] = 255.0 * g.pixels[i];
  return p;
}

// Separable [1 4 6 4 1]/16 blur, then 2x2 averaging.
Plane downsample(const Plane& src) {
  constexpr std::array<double, 5> k{1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  Plane tmp(src.h, src.w), p(src.h, src.w);
  for (std::size_t r = 0; r < src.h; ++r) {
    for (std::size_t c = 0; c < src.w; ++c) {
      double acc = 0.0;
      for (long j = -2; j <= 2; ++j) acc += k[j + 2] * src.clamped(static_cast<long>(r), static_cast<long>(c) + j);
      tmp(r, c) = acc;
    }
  }
  for (std::size_t r = 0; r < src.h; ++r) {
    for (std::size_t c = 0; c < src.w; ++c) {
      double acc = 0.0;
      for (long j = -2; j <= 2; ++j) acc += k[j + 2] * tmp.clamped(static_cast<long>(r) + j, static_cast<long>(c));
      p(r, c) = acc;
    }
  }
  Plane out((p.h + 1) / 2, (p.w + 1) / 2);
  for (std::size_t r = 0; r < out.h; ++r) {
    for (std::size_t c = 0; c < out.w; ++c) {
      const long r2 = static_cast<long>(2 * r), c2 = static_cast<long>(2 * c);
      out(r, c) = 0.25 * (p.clamped(r2, c2) + p.clamped(r2, c2 + 1) + p.clamped(r2 + 1, c2) +
                          p.clamped(r2 + 1, c2 + 1));
    }
  }
  return out;
}

// Resamples a coarse flow component onto a finer grid; `gain` rescales the
// displacement to fine-grid pixels.
Plane upsample_flow(const Plane& coarse, std::size_t h, std::size_t w, double gain) {
  Plane out(h, w);
  const double sr = static_cast<double>(coarse.h) / static_cast<double>(h);
  const double sc = static_cast<double>(coarse.w) / static_cast<double>(w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      out(r, c) = coarse.bilinear((static_cast<double>(r) + 0.5) * sr - 0.5, (static_cast<double>(c) + 0.5) * sc - 0.5) * gain;
    }
  }
  return out;
}

// Horn-Schunck neighbourhood average: 1/6 edge neighbours, 1/12 corners.
void local_average(const Plane& p, Plane& out) {
  for (std::size_t r = 0; r < p.h; ++r) {
    const long ri = static_cast<long>(r);
    for (std::size_t c = 0; c < p.w; ++c) {
      const long ci = static_cast<long>(c);
      const double edges = (p.clamped(ri - 1, ci) + p.clamped(ri + 1, ci)) + (p.clamped(ri, ci - 1) + p.clamped(ri, ci + 1));
      const double corners = (p.clamped(ri - 1, ci - 1) + p.clamped(ri - 1, ci + 1)) +
                             (p.clamped(ri + 1, ci - 1) + p.clamped(ri + 1, ci + 1));
      out(r, c) = edges / 6.0 + corners / 12.0;
    }
  }
}

void refine_level(const Plane& i1, const Plane& i2, Plane& u, Plane& v, const FlowConfig& config) {
  const std::size_t h = i1.h, w = i1.w;
  Plane warped(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      warped(r, c) = i2.bilinear(static_cast<double>(r) + v(r, c), static_cast<double>(c) + u(r, c));
    }
  }
  Plane ix(h, w), iy(h, w), it(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    const long ri = static_cast<long>(r);
    for (std::size_t c = 0; c < w; ++c) {
      const long ci = static_cast<long>(c);
      ix(r, c) = 0.25 * ((i1.clamped(ri, ci + 1) - i1.clamped(ri, ci - 1)) +
                         (warped.clamped(ri, ci + 1) - warped.clamped(ri, ci - 1)));
      iy(r, c) = 0.25 * ((i1.clamped(ri + 1, ci) - i1.clamped(ri - 1, ci)) +
                         (warped.clamped(ri + 1, ci) - warped.clamped(ri - 1, ci)));
      it(r, c) = warped(r, c) - i1(r, c);
    }
  }
  const Plane u0 = u, v0 = v;
  const double a2 = config.alpha * config.alpha;
  Plane ubar(h, w), vbar(h, w);
  for (int k = 0; k < config.iterations; ++k) {
    local_average(u, ubar);
    local_average(v, vbar);
    for (std::size_t i = 0; i < u.d.size(); ++i) {
      const double gx = ix.d[i], gy = iy.d[i];
      const double t = (gx * (ubar.d[i] - u0.d[i]) + gy * (vbar.d[i] - v0.d[i]) + it.d[i]) / (a2 + gx * gx + gy * gy);
      u.d[i] = ubar.d[i] - gx * t;
      v.d[i] = vbar.d[i] - gy * t;
    }
  }
}

void check_even(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) % SegNet::kDownsample != 0 || x.dim(3) % SegNet::kDownsample != 0) {
    throw ConfigError(fmt::format("segmentation input must be [N,3,H,W] with even H and W, got {}", shape_string(x.shape())));
  }
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy_n(b.data() + i * cb * hw, cb * hw, out.data() + i * (ca + cb) * hw + ca * hw);
  }
  return out;
}

void split_channels(const Tensor& x, std::size_t ca, Tensor& a, Tensor& b) {
  const std::size_t n = x.dim(0), c = x.dim(1), cb = c - ca, hw = x.dim(2) * x.dim(3);
  a = Tensor({n, ca, x.dim(2), x.dim(3)});
  b = Tensor({n, cb, x.dim(2), x.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(x.data() + i * c * hw, ca * hw, a.data() + i * ca * hw);
    std::copy_n(x.data() + i * c * hw + ca * hw, cb * hw, b.data() + i * cb * hw);
  }
}

Tensor add(Tensor a, const Tensor& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

Tensor batch_images(const std::vector<Image>& images, std::span<const std::size_t> order) {
  const std::size_t h = images[order[0]].height, w = images[order[0]].width;
  Tensor x({order.size(), 3, h, w});
  for (std::size_t i = 0; i < order.size(); ++i) image_to_chw(images[order[i]], x.data() + i * 3 * h * w);
  return x;
}

SegmentationMap argmax_map(const Tensor& logits, std::size_t n) {
  const std::size_t k = logits.dim(1), h = logits.dim(2), w = logits.dim(3), hw = h * w;
  SegmentationMap out(h, w);
  const float* base = logits.data() + n * k * hw;
  for (std::size_t p = 0; p < hw; ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (base[c * hw + p] > base[best * hw + p]) best = c;
    }
    out.classes[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

constexpr std::array<char, 4> kCacheMagic{'A', 'T', 'N', 'C'};
constexpr std::uint32_t kDtypeU8 = 1;
constexpr std::uint32_t kDtypeF32 = 2;

void write_cache_header(std::ostream& out, std::uint32_t dtype, std::size_t h, std::size_t w) {
  out.write(kCacheMagic.data(), 4);
  io::write_le<std::uint32_t>(out, dtype);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(h));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w));
}

// Returns (h, w, payload bytes).
std::tuple<std::size_t, std::size_t, std::size_t> read_cache_header(std::ifstream& in, std::uint32_t dtype,
                                                                   const std::filesystem::path& path) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kCacheMagic) throw FormatError(path.string() + ": not a cache file");
  const auto code = io::read_le<std::uint32_t>(in);
  if (code != dtype) throw FormatError(fmt::format("{}: dtype code {} where {} was expected", path.string(), code, dtype));
  const auto h = io::read_le<std::uint32_t>(in);
  const auto w = io::read_le<std::uint32_t>(in);
  const auto total = std::filesystem::file_size(path);
  return {h, w, static_cast<std::size_t>(total - 16)};
}

}  // namespace

void FlowConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("flow alpha must be positive");
  if (iterations < 1) throw ConfigError("flow iterations must be at least 1");
  if (levels < 1) throw ConfigError("flow pyramid levels must be at least 1");
}

FlowField compute_flow(const Image& prev, const Image& next, const FlowConfig& config) {
  config.validate();
  if (prev.height != next.height || prev.width != next.width || prev.channels != next.channels) {
    throw UsageError(fmt::format("flow frames differ in shape: {}x{}x{} vs {}x{}x{}", prev.height, prev.width,
                                 prev.channels, next.height, next.width, next.channels));
  }
  std::vector<Plane> p1{luminance(prev)}, p2{luminance(next)};
  while (static_cast<int>(p1.size()) < config.levels && std::min(p1.back().h, p1.back().w) >= 16) {
    p1.push_back(downsample(p1.back()));
    p2.push_back(downsample(p2.back()));
  }
  Plane u(p1.back().h, p1.back().w), v(p1.back().h, p1.back().w);
  for (std::size_t level = p1.size(); level-- > 0;) {
    if (u.h != p1[level].h || u.w != p1[level].w) {
      const double sr = static_cast<double>(u.h) / static_cast<double>(p1[level].h);
      const double sc = static_cast<double>(u.w) / static_cast<double>(p1[level].w);
      u = upsample_flow(u, p1[level].h, p1[level].w, 1.0 / sc);
      v = upsample_flow(v, p1[level].h, p1[level].w, 1.0 / sr);
    }
    refine_level(p1[level], p2[level], u, v, config);
  }
  FlowField out(prev.height, prev.width);
  for (std::size_t i = 0; i < u.d.size(); ++i) {
    if (!std::isfinite(u.d[i]) || !std::isfinite(v.d[i])) throw NumericError("optical flow produced a non-finite value");
    out.u[i] = static_cast<float>(u.d[i]);
    out.v[i] = static_cast<float>(v.d[i]);
  }
  return out;
}

FlowField mirror_flow(const FlowField& flow) {
  FlowField out(flow.height, flow.width);
  for (std::size_t r = 0; r < flow.height; ++r) {
    for (std::size_t c = 0; c < flow.width; ++c) {
      const std::size_t src = r * flow.width + c, dst = r * flow.width + (flow.width - 1 - c);
      out.u[dst] = -flow.u[src];
      out.v[dst] = flow.v[src];
    }
  }
  return out;
}

SegNet::SegNet(std::uint64_t seed)
    : conv1_("seg.conv1", {3, 8, 3, 1, 1}),
      conv2_("seg.conv2", {8, 16, 3, 2, 1}),
      conv3_("seg.conv3", {16, 16, 3, 1, 1}),
      conv4_("seg.conv4", {24, 16, 3, 1, 1}),
      head_("seg.head", {16, kNumSceneClasses, 1, 1, 0}),
      bn1_("seg.bn1", 8),
      bn2_("seg.bn2", 16),
      bn3_("seg.bn3", 16),
      bn4_("seg.bn4", 16) {
  Rng rng(derive_seed(seed, "segnet.init"));
  conv1_.init(rng);
  conv2_.init(rng);
  conv3_.init(rng);
  conv4_.init(rng);
  head_.init(rng);
}

Tensor SegNet::forward(const Tensor& x, Mode mode) {
  check_even(x);
  const Tensor a1 = r1_.forward(bn1_.forward(conv1_.forward(x), mode));
  const Tensor a2 = r2_.forward(bn2_.forward(conv2_.forward(a1), mode));
  const Tensor a3 = r3_.forward(bn3_.forward(conv3_.forward(a2), mode));
  const Tensor cat = concat_channels(upsample2x(a3), a1);
  const Tensor a4 = r4_.forward(bn4_.forward(conv4_.forward(cat), mode));
  return head_.forward(a4);
}

Tensor SegNet::infer(const Tensor& x) const {
  check_even(x);
  const Tensor a1 = relu(bn1_.infer(conv1_.infer(x)));
  const Tensor a2 = relu(bn2_.infer(conv2_.infer(a1)));
  const Tensor a3 = relu(bn3_.infer(conv3_.infer(a2)));
  const Tensor cat = concat_channels(upsample2x(a3), a1);
  const Tensor a4 = relu(bn4_.infer(conv4_.infer(cat)));
  return head_.infer(a4);
}

void SegNet::backward(const Tensor& d_logits) {
  const Tensor d4 = conv4_.backward(bn4_.backward(r4_.backward(head_.backward(d_logits))));
  Tensor d_up, d_skip;
  split_channels(d4, 16, d_up, d_skip);
  const Tensor d3 = conv3_.backward(bn3_.backward(r3_.backward(upsample2x_backward(d_up))));
  const Tensor d2 = conv2_.backward(bn2_.backward(r2_.backward(d3)));
  conv1_.backward(bn1_.backward(r1_.backward(add(d2, d_skip))));
}

ParamRefs<float> SegNet::parameters() {
  ParamRefs<float> out;
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
  conv3_.collect(out);
  bn3_.collect(out);
  conv4_.collect(out);
  bn4_.collect(out);
  head_.collect(out);
  return out;
}

BufferRefs<float> SegNet::buffers() {
  BufferRefs<float> out;
  bn1_.collect_buffers(out);
  bn2_.collect_buffers(out);
  bn3_.collect_buffers(out);
  bn4_.collect_buffers(out);
  return out;
}

std::size_t SegNet::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

SegNet train_segmentation(const std::vector<Image>& images, const std::vector<SegmentationMap>& labels,
                          const SegTrainConfig& config, SegTrainReport* report) {
  if (images.size() != labels.size()) throw UsageError("segmentation images and labels differ in count");
  if (images.size() < 200) {
    throw UsageError(fmt::format("segmentation training needs at least 200 labeled frames, got {}", images.size()));
  }
  if (config.batch_size < 2) throw ConfigError("segmentation batch size must be at least 2");
  std::array<std::size_t, kNumSceneClasses> counts{};
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (labels[i].height != images[i].height || labels[i].width != images[i].width) {
      throw UsageError("segmentation label shape differs from its image");
    }
    for (auto c : labels[i].classes) {
      if (c >= kNumSceneClasses) throw FormatError(fmt::format("class id {} outside [0, 8]", c));
      ++counts[c];
    }
  }
  for (std::size_t c = 0; c < kNumSceneClasses; ++c) {
    if (counts[c] == 0) spdlog::warn("segmentation labels contain no '{}' pixels", kSceneClassNames[c]);
  }

  SegNet model(config.seed);
  ParamRefs<float> params = model.parameters();
  OptimizerConfig opt;
  opt.learning_rate = config.learning_rate;
  Rng rng(derive_seed(config.seed, "segnet.order"));
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t hw = images[0].height * images[0].width;
  std::vector<std::uint8_t> target;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)), i - 1)]);
    }
    // LR x0.3 for the last third.
    const double lr = epoch >= 2 * config.epochs / 3 ? 0.3 * config.learning_rate : config.learning_rate;
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 1 < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      if (n < 2) break;
      const std::span<const std::size_t> idx(order.data() + start, n);
      const Tensor x = batch_images(images, idx);
      target.resize(n * hw);
      for (std::size_t i = 0; i < n; ++i) std::copy_n(labels[idx[i]].classes.data(), hw, target.data() + i * hw);
      zero_grads<float>(params);
      const Tensor logits = model.forward(x, Mode::Train);
      Tensor grad;
      total += softmax_cross_entropy(logits, std::span<const std::uint8_t>(target), &grad);
      ++batches;
      model.backward(grad);
      adam_step<float>(params, opt, lr);
    }
    const double mean = total / static_cast<double>(std::max<std::size_t>(1, batches));
    if (report) report->epoch_loss.push_back(mean);
    spdlog::debug("segnet epoch {} loss {:.4f}", epoch + 1, mean);
  }
  if (report) {
    double acc = 0.0;
    const auto pred = infer_segmentation(model, images);
    for (std::size_t i = 0; i < images.size(); ++i) acc += pixel_accuracy(pred[i], labels[i]);
    report->train_accuracy = acc / static_cast<double>(images.size());
  }
  return model;
}

SegmentationMap infer_segmentation(const SegNet& model, const Image& image) {
  const std::size_t idx = 0;
  const Tensor logits = model.infer(batch_images({image}, std::span<const std::size_t>(&idx, 1)));
  return argmax_map(logits, 0);
}

std::vector<SegmentationMap> infer_segmentation(const SegNet& model, const std::vector<Image>& images) {
  std::vector<SegmentationMap> out;
  out.reserve(images.size());
  constexpr std::size_t kChunk = 32;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, images.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = model.infer(batch_images(images, idx));
    for (std::size_t i = 0; i < n; ++i) out.push_back(argmax_map(logits, i));
  }
  return out;
}

double pixel_accuracy(const SegmentationMap& predicted, const SegmentationMap& truth) {
  if (predicted.classes.size() != truth.classes.size() || truth.classes.empty()) {
    throw UsageError("pixel accuracy needs two non-empty maps of equal size");
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.classes.size(); ++i) hit += predicted.classes[i] == truth.classes[i];
  return static_cast<double>(hit) / static_cast<double>(truth.classes.size());
}

void image_to_chw(const Image& image, float* dst) {
  const std::size_t hw = image.height * image.width, c = image.channels;
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) dst[ch * hw + p] = image.pixels[p * c + ch];
  }
}

void stack_channels_into(const Image& image, const SegmentationMap* seg, const FlowField* flow,
                         const StackConfig& config, float* dst) {
  if (image.channels != 3) throw UsageError("stack_channels expects an RGB image");
  const std::size_t h = image.height, w = image.width, hw = h * w;
  image_to_chw(image, dst);
  float* next = dst + 3 * hw;
  if (config.segmentation) {
    if (!seg || seg->height != h || seg->width != w) throw UsageError("segmentation map missing or of the wrong size");
    if (config.seg_one_hot) {
      std::fill_n(next, kNumSceneClasses * hw, 0.0f);
      for (std::size_t p = 0; p < hw; ++p) next[seg->classes[p] * hw + p] = 1.0f;
      next += kNumSceneClasses * hw;
    } else {
      for (std::size_t p = 0; p < hw; ++p) next[p] = static_cast<float>(seg->classes[p]) / 8.0f;
      next += hw;
    }
  }
  if (config.flow) {
    if (!flow || flow->height != h || flow->width != w) throw UsageError("flow field missing or of the wrong size");
    const auto m = static_cast<float>(config.max_flow);
    for (std::size_t p = 0; p < hw; ++p) {
      next[p] = std::clamp(flow->u[p], -m, m) / m;
      next[hw + p] = std::clamp(flow->v[p], -m, m) / m;
    }
  }
}

Tensor stack_channels(const Image& image, const SegmentationMap* seg, const FlowField* flow,
                      const StackConfig& config) {
  Tensor out({config.channels(), image.height, image.width});
  stack_channels_into(image, seg, flow, config, out.data());
  return out;
}

void write_seg_cache(const std::vector<SegmentationMap>& maps, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::size_t h = maps.empty() ? 0 : maps[0].height, w = maps.empty() ? 0 : maps[0].width;
  write_cache_header(out, kDtypeU8, h, w);
  for (const auto& m : maps) {
    if (m.height != h || m.width != w) throw UsageError("segmentation cache maps differ in size");
    out.write(reinterpret_cast<const char*>(m.classes.data()), static_cast<std::streamsize>(m.classes.size()));
  }
}

std::vector<SegmentationMap> read_seg_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  const auto [h, w, bytes] = read_cache_header(in, kDtypeU8, path);
  std::vector<SegmentationMap> out;
  if (h * w == 0) return out;
  if (bytes % (h * w) != 0) throw FormatError(path.string() + ": truncated segmentation cache");
  for (std::size_t i = 0; i < bytes / (h * w); ++i) {
    SegmentationMap m(h, w);
    in.read(reinterpret_cast<char*>(m.classes.data()), static_cast<std::streamsize>(h * w));
    if (!in) throw FormatError(path.string() + ": truncated segmentation cache");
    out.push_back(std::move(m));
  }
  return out;
}

void write_flow_cache(const std::vector<FlowField>& flows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::size_t h = flows.empty() ? 0 : flows[0].height, w = flows.empty() ? 0 : flows[0].width;
  write_cache_header(out, kDtypeF32, h, w);
  for (const auto& f : flows) {
    if (f.height != h || f.width != w) throw UsageError("flow cache fields differ in size");
    for (float x : f.u) io::write_le(out, x);
    for (float x : f.v) io::write_le(out, x);
  }
}

std::vector<FlowField> read_flow_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  const auto [h, w, bytes] = read_cache_header(in, kDtypeF32, path);
  std::vector<FlowField> out;
  if (h * w == 0) return out;
  const std::size_t per = 2 * h * w * sizeof(float);
  if (bytes % per != 0) throw FormatError(path.string() + ": truncated flow cache");
  for (std::size_t i = 0; i < bytes / per; ++i) {
    FlowField f(h, w);
    for (auto& x : f.u) x = io::read_le<float>(in);
    for (auto& x : f.v) x = io::read_le<float>(in);
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace atn
