#include "atn/layers.hpp"

#include <Eigen/Core>
#include <cmath>

namespace atn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
MapMat<T> as_matrix(T* data, std::size_t rows, std::size_t cols) {
  return MapMat<T>(data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <typename T>
CMapMat<T> as_matrix(const T* data, std::size_t rows, std::size_t cols) {
  return CMapMat<T>(data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

void require_rank(const Shape& shape, std::size_t rank, const char* who) {
  if (shape.size() != rank) {
    throw ConfigError(std::string(who) + ": expected rank " + std::to_string(rank) +
                      " input, got " + shape_string(shape));
  }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::string name, Conv2dSpec spec)
    : weight(name + ".weight",
             {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}),
      bias(name + ".bias", {spec.out_channels}),
      spec_(spec) {
  if (spec.stride == 0 || spec.kernel == 0) throw ConfigError(name + ": stride and kernel must be positive");
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  const double fan_in = static_cast<double>(spec_.in_channels * spec_.kernel * spec_.kernel);
  const double std_dev = std::sqrt(2.0 / fan_in);
  for (auto& w : weight.value.values()) w = static_cast<T>(std_dev * standard_normal(rng));
  bias.value.fill(T{0});
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& in) const {
  require_rank(in, 4, "conv2d");
  if (in[1] != spec_.in_channels) {
    throw ConfigError("conv2d: input " + shape_string(in) + " does not match weights " +
                      shape_string(weight.value.shape()));
  }
  const std::size_t h = in[2] + 2 * spec_.padding;
  const std::size_t w = in[3] + 2 * spec_.padding;
  if (spec_.kernel > h || spec_.kernel > w) {
    throw ConfigError("conv2d: kernel " + shape_string(weight.value.shape()) +
                      " larger than padded input " + shape_string(in));
  }
  return {in[0], spec_.out_channels, (h - spec_.kernel) / spec_.stride + 1,
          (w - spec_.kernel) / spec_.stride + 1};
}

template <typename T>
BasicTensor<T> Conv2d<T>::run(const BasicTensor<T>& x, std::vector<T>& cols) const {
  const Shape out_shape = output_shape(x.shape());
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = out_shape[2], ow = out_shape[3], plane = oh * ow;
  const std::size_t k = spec_.kernel, s = spec_.stride;
  const long pad = static_cast<long>(spec_.padding);
  const std::size_t rows = c * k * k, width = n * plane;
  // Unpadded layers write every entry, so only padded ones need zeroing.
  if (pad > 0) cols.assign(rows * width, T{0});
  else cols.resize(rows * width);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols.data() + ((ci * k + ky) * k + kx) * width;
        for (std::size_t b = 0; b < n; ++b) {
          const T* src = x.data() + (b * c + ci) * h * w;
          T* dst = row + b * plane;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * s + ky) - pad;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            const T* src_row = src + iy * w;
            T* dst_row = dst + oy * ow;
            if (pad == 0) {
              const T* from = src_row + kx;
              if (s == 1) std::copy(from, from + ow, dst_row);
              else for (std::size_t ox = 0; ox < ow; ++ox) dst_row[ox] = from[ox * s];
              continue;
            }
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox * s + kx) - pad;
              if (ix >= 0 && ix < static_cast<long>(w)) dst_row[ox] = src_row[ix];
            }
          }
        }
      }
    }
  }
  const std::size_t oc = spec_.out_channels;
  RowMat<T> product = as_matrix(weight.value.data(), oc, rows) * as_matrix(cols.data(), rows, width);
  BasicTensor<T> y(out_shape);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < oc; ++o) {
      const T bo = bias.value[o];
      const T* src = product.data() + o * width + b * plane;
      T* dst = y.data() + (b * oc + o) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + bo;
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> Conv2d<T>::forward(const BasicTensor<T>& x) {
  BasicTensor<T> y = run(x, cols_);
  input_shape_ = x.shape();
  cached_ = true;
  return y;
}

template <typename T>
BasicTensor<T> Conv2d<T>::infer(const BasicTensor<T>& x) const {
  std::vector<T> cols;
  return run(x, cols);
}

template <typename T>
BasicTensor<T> Conv2d<T>::backward(const BasicTensor<T>& dy) {
  return backward_impl(dy, true);
}

template <typename T>
void Conv2d<T>::backward_weights(const BasicTensor<T>& dy) {
  backward_impl(dy, false);
}

template <typename T>
BasicTensor<T> Conv2d<T>::backward_impl(const BasicTensor<T>& dy, bool input_grad) {
  if (!cached_) throw UsageError(weight.name + ": backward called without a cached forward pass");
  const Shape out_shape = output_shape(input_shape_);
  if (dy.shape() != out_shape) {
    throw ConfigError(weight.name + ": upstream gradient " + shape_string(dy.shape()) +
                      " does not match output " + shape_string(out_shape));
  }
  const std::size_t n = input_shape_[0], c = input_shape_[1], h = input_shape_[2], w = input_shape_[3];
  const std::size_t oc = spec_.out_channels, oh = out_shape[2], ow = out_shape[3], plane = oh * ow;
  const std::size_t k = spec_.kernel, s = spec_.stride;
  const long pad = static_cast<long>(spec_.padding);
  const std::size_t rows = c * k * k, width = n * plane;

  RowMat<T> d_out(oc, width);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < oc; ++o) {
      const T* src = dy.data() + (b * oc + o) * plane;
      std::copy(src, src + plane, d_out.data() + o * width + b * plane);
    }
  }
  auto cols = as_matrix(static_cast<const T*>(cols_.data()), rows, width);
  as_matrix(weight.value.grad().data(), oc, rows).noalias() += d_out * cols.transpose();
  auto db = bias.value.grad();
  for (std::size_t o = 0; o < oc; ++o) db[o] += d_out.row(static_cast<Eigen::Index>(o)).sum();
  if (!input_grad) return {};

  RowMat<T> d_cols = as_matrix(static_cast<const T*>(weight.value.data()), oc, rows).transpose() * d_out;
  BasicTensor<T> dx(input_shape_);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = d_cols.data() + ((ci * k + ky) * k + kx) * width;
        for (std::size_t b = 0; b < n; ++b) {
          T* dst = dx.data() + (b * c + ci) * h * w;
          const T* src = row + b * plane;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * s + ky) - pad;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox * s + kx) - pad;
              if (ix >= 0 && ix < static_cast<long>(w)) dst[iy * w + ix] += src[oy * ow + ox];
            }
          }
        }
      }
    }
  }
  return dx;
}

// ------------------------------------------------------------- BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(std::string name, std::size_t channels, double momentum, double epsilon)
    : gamma(name + ".gamma", {channels}),
      beta(name + ".beta", {channels}),
      running_mean({channels}, T{0}),
      running_var({channels}, T{1}),
      channels_(channels),
      momentum_(momentum),
      epsilon_(epsilon) {
  gamma.value.fill(T{1});
}

template <typename T>
void BatchNorm<T>::collect_buffers(BufferRefs<T>& out) {
  const std::string base = gamma.name.substr(0, gamma.name.size() - std::string(".gamma").size());
  out.push_back({base + ".running_mean", &running_mean});
  out.push_back({base + ".running_var", &running_var});
}

namespace {
struct BnLayout {
  std::size_t n, c, inner;
};
BnLayout bn_layout(const Shape& s, std::size_t channels) {
  if (s.size() != 2 && s.size() != 4) throw ConfigError("batchnorm: expected [N,C] or [N,C,H,W], got " + shape_string(s));
  if (s[1] != channels) {
    throw ConfigError("batchnorm: input " + shape_string(s) + " has wrong channel count, expected " +
                      std::to_string(channels));
  }
  return {s[0], s[1], s.size() == 4 ? s[2] * s[3] : 1};
}
}  // namespace

template <typename T>
BasicTensor<T> BatchNorm<T>::forward(const BasicTensor<T>& x, Mode mode) {
  const auto [n, c, inner] = bn_layout(x.shape(), channels_);
  if (mode == Mode::Train && n < 2) {
    throw UsageError(gamma.name + ": batch size " + std::to_string(n) + " is too small for train mode (need >= 2)");
  }
  mode_ = mode;
  xhat_ = BasicTensor<T>(x.shape());
  inv_std_.assign(c, T{0});
  BasicTensor<T> y(x.shape());
  const double count = static_cast<double>(n * inner);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (mode == Mode::Train) {
      double sum = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) sum += p[i];
      }
      mean = sum / count;
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / count;
      running_mean[ch] = static_cast<T>((1.0 - momentum_) * running_mean[ch] + momentum_ * mean);
      const double unbiased = count > 1 ? sq / (count - 1.0) : var;
      running_var[ch] = static_cast<T>((1.0 - momentum_) * running_var[ch] + momentum_ * unbiased);
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const double inv = 1.0 / std::sqrt(var + epsilon_);
    inv_std_[ch] = static_cast<T>(inv);
    const T g = gamma.value[ch], bta = beta.value[ch];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const T xh = static_cast<T>((x[off + i] - mean) * inv);
        xhat_[off + i] = xh;
        y[off + i] = g * xh + bta;
      }
    }
  }
  cached_ = true;
  return y;
}

template <typename T>
BasicTensor<T> BatchNorm<T>::infer(const BasicTensor<T>& x) const {
  const auto [n, c, inner] = bn_layout(x.shape(), channels_);
  BasicTensor<T> y(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + epsilon_));
    const T scale = gamma.value[ch] * inv;
    const T shift = beta.value[ch] - running_mean[ch] * scale;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) y[off + i] = x[off + i] * scale + shift;
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> BatchNorm<T>::backward(const BasicTensor<T>& dy) {
  if (!cached_) throw UsageError(gamma.name + ": backward called without a cached forward pass");
  const auto [n, c, inner] = bn_layout(dy.shape(), channels_);
  BasicTensor<T> dx(dy.shape());
  auto dg = gamma.value.grad();
  auto db = beta.value.grad();
  const double count = static_cast<double>(n * inner);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xhat += dy[off + i] * xhat_[off + i];
      }
    }
    dg[ch] += static_cast<T>(sum_dy_xhat);
    db[ch] += static_cast<T>(sum_dy);
    const double g = gamma.value[ch];
    const double inv = inv_std_[ch];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        if (mode_ == Mode::Train) {
          dx[off + i] = static_cast<T>(g * inv / count *
                                       (count * dy[off + i] - sum_dy - xhat_[off + i] * sum_dy_xhat));
        } else {
          dx[off + i] = static_cast<T>(g * inv * dy[off + i]);
        }
      }
    }
  }
  return dx;
}

// --------------------------------------------------------------- Dropout

namespace {
void check_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate " + std::to_string(rate) + " outside [0, 1)");
  }
}

template <typename T>
void fill_mask(std::vector<T>& mask, std::size_t n, double rate, Rng& rng) {
  mask.resize(n);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  // One draw from the layer stream seeds a splitmix64 sequence for the mask.
  std::uint64_t state = rng();
  const auto threshold = static_cast<std::uint64_t>(rate * 9007199254740992.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= z >> 31;
    mask[i] = (z >> 11) < threshold ? T{0} : scale;
  }
}
}  // namespace

template <typename T>
Dropout<T>::Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
  check_rate(rate);
}

template <typename T>
BasicTensor<T> Dropout<T>::forward(const BasicTensor<T>& x, Mode mode) {
  if (mode == Mode::Infer || rate_ == 0.0) {
    cached_ = false;
    mask_.clear();
    return x;
  }
  fill_mask(mask_, x.size(), rate_, rng_);
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * mask_[i];
  cached_ = true;
  return y;
}

template <typename T>
BasicTensor<T> Dropout<T>::backward(const BasicTensor<T>& dy) const {
  if (!cached_) return dy;
  BasicTensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask_[i];
  return dx;
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double rate, Mode mode, std::uint64_t seed) {
  check_rate(rate);
  if (mode == Mode::Infer || rate == 0.0) return x;
  Rng rng(seed);
  std::vector<T> mask;
  fill_mask(mask, x.size(), rate, rng);
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * mask[i];
  return y;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(std::string name, std::size_t in, std::size_t out)
    : weight(name + ".weight", {out, in}), bias(name + ".bias", {out}), in_(in), out_(out) {}

template <typename T>
void Linear<T>::init(Rng& rng, double gain) {
  const double std_dev = std::sqrt(gain / static_cast<double>(in_));
  for (auto& w : weight.value.values()) w = static_cast<T>(std_dev * standard_normal(rng));
  bias.value.fill(T{0});
}

template <typename T>
BasicTensor<T> Linear<T>::infer(const BasicTensor<T>& x) const {
  if (x.rank() != 2 || x.dim(1) != in_) {
    throw ConfigError(weight.name + ": input " + shape_string(x.shape()) + " does not match weights " +
                      shape_string(weight.value.shape()));
  }
  const std::size_t n = x.dim(0);
  BasicTensor<T> y({n, out_});
  auto ym = as_matrix(y.data(), n, out_);
  ym.noalias() = as_matrix(x.data(), n, in_) * as_matrix(weight.value.data(), out_, in_).transpose();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < out_; ++o) y[b * out_ + o] += bias.value[o];
  return y;
}

template <typename T>
BasicTensor<T> Linear<T>::forward(const BasicTensor<T>& x) {
  BasicTensor<T> y = infer(x);
  input_ = x;
  cached_ = true;
  return y;
}

template <typename T>
BasicTensor<T> Linear<T>::backward(const BasicTensor<T>& dy) {
  if (!cached_) throw UsageError(weight.name + ": backward called without a cached forward pass");
  const std::size_t n = input_.dim(0);
  if (dy.rank() != 2 || dy.dim(0) != n || dy.dim(1) != out_) {
    throw ConfigError(weight.name + ": upstream gradient " + shape_string(dy.shape()) + " has wrong shape");
  }
  auto d = as_matrix(dy.data(), n, out_);
  as_matrix(weight.value.grad().data(), out_, in_).noalias() += d.transpose() * as_matrix(input_.data(), n, in_);
  auto db = bias.value.grad();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < out_; ++o) db[o] += dy[b * out_ + o];
  BasicTensor<T> dx({n, in_});
  as_matrix(dx.data(), n, in_).noalias() = d * as_matrix(weight.value.data(), out_, in_);
  return dx;
}

// ----------------------------------------------------------- activations

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

template <typename T>
BasicTensor<T> Relu<T>::forward(const BasicTensor<T>& x) {
  output_ = relu(x);
  return output_;
}

template <typename T>
BasicTensor<T> Relu<T>::backward(const BasicTensor<T>& dy) const {
  if (output_.size() != dy.size()) throw UsageError("relu: backward without matching forward");
  BasicTensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = output_[i] > T{0} ? dy[i] : T{0};
  return dx;
}

template <typename T>
BasicTensor<T> Tanh<T>::forward(const BasicTensor<T>& x) {
  output_ = atn::tanh(x);
  return output_;
}

template <typename T>
BasicTensor<T> Tanh<T>::backward(const BasicTensor<T>& dy) const {
  if (output_.size() != dy.size()) throw UsageError("tanh: backward without matching forward");
  BasicTensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * (T{1} - output_[i] * output_[i]);
  return dx;
}

template <typename T>
BasicTensor<T> upsample2x(const BasicTensor<T>& x) {
  require_rank(x.shape(), 4, "upsample2x");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  BasicTensor<T> y({n, c, 2 * h, 2 * w});
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = y.data() + p * 4 * h * w;
    for (std::size_t yy = 0; yy < 2 * h; ++yy)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[yy * 2 * w + xx] = src[(yy / 2) * w + xx / 2];
  }
  return y;
}

template <typename T>
BasicTensor<T> upsample2x_backward(const BasicTensor<T>& dy) {
  require_rank(dy.shape(), 4, "upsample2x_backward");
  const std::size_t n = dy.dim(0), c = dy.dim(1), h = dy.dim(2) / 2, w = dy.dim(3) / 2;
  BasicTensor<T> dx({n, c, h, w});
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = dy.data() + p * 4 * h * w;
    T* dst = dx.data() + p * h * w;
    for (std::size_t yy = 0; yy < 2 * h; ++yy)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[(yy / 2) * w + xx / 2] += src[yy * 2 * w + xx];
  }
  return dx;
}

// ------------------------------------------------------------------ LSTM

template <typename T>
Lstm<T>::Lstm(std::string name, std::size_t input_width, std::size_t hidden_width)
    : w_input(name + ".w_input", {4 * hidden_width, input_width}),
      w_hidden(name + ".w_hidden", {4 * hidden_width, hidden_width}),
      bias(name + ".bias", {4 * hidden_width}),
      input_(input_width),
      hidden_(hidden_width) {
  if (hidden_width == 0) throw ConfigError(name + ": hidden width must be positive");
}

template <typename T>
void Lstm<T>::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_));
  for (auto& w : w_input.value.values()) w = static_cast<T>(uniform(rng, -bound, bound));
  for (auto& w : w_hidden.value.values()) w = static_cast<T>(uniform(rng, -bound, bound));
  bias.value.fill(T{0});
  for (std::size_t j = hidden_; j < 2 * hidden_; ++j) bias.value[j] = T{1};
}

template <typename T>
LstmState<T> Lstm<T>::zero_state(std::size_t batch) const {
  return {BasicTensor<T>({batch, hidden_}), BasicTensor<T>({batch, hidden_})};
}

template <typename T>
LstmState<T> Lstm<T>::cell(const BasicTensor<T>& x, const LstmState<T>& state, LstmStepCache<T>* cache) const {
  if (x.rank() != 2 || x.dim(1) != input_) {
    throw ConfigError(w_input.name + ": input " + shape_string(x.shape()) + " does not match input width " +
                      std::to_string(input_));
  }
  const std::size_t n = x.dim(0), hw = hidden_;
  if (state.hidden.shape() != Shape{n, hw} || state.cell.shape() != Shape{n, hw}) {
    throw ConfigError(w_input.name + ": state " + shape_string(state.hidden.shape()) + "/" +
                      shape_string(state.cell.shape()) + " does not match hidden width " + std::to_string(hw));
  }
  BasicTensor<T> gates({n, 4 * hw});
  auto gm = as_matrix(gates.data(), n, 4 * hw);
  gm.noalias() = as_matrix(x.data(), n, input_) * as_matrix(w_input.value.data(), 4 * hw, input_).transpose();
  gm.noalias() += as_matrix(state.hidden.data(), n, hw) * as_matrix(w_hidden.value.data(), 4 * hw, hw).transpose();
  LstmState<T> next = zero_state(n);
  BasicTensor<T> cell_tanh({n, hw});
  for (std::size_t b = 0; b < n; ++b) {
    T* g = gates.data() + b * 4 * hw;
    for (std::size_t j = 0; j < 4 * hw; ++j) {
      const T z = g[j] + bias.value[j];
      g[j] = (j >= 2 * hw && j < 3 * hw) ? std::tanh(z) : sigmoid(z);
    }
    for (std::size_t j = 0; j < hw; ++j) {
      const T i = g[j], f = g[hw + j], gg = g[2 * hw + j], o = g[3 * hw + j];
      const T c = f * state.cell[b * hw + j] + i * gg;
      const T tc = std::tanh(c);
      next.cell[b * hw + j] = c;
      next.hidden[b * hw + j] = o * tc;
      cell_tanh[b * hw + j] = tc;
    }
  }
  if (cache != nullptr) {
    cache->input = x;
    cache->previous = state;
    cache->gates = std::move(gates);
    cache->cell_tanh = std::move(cell_tanh);
  }
  return next;
}

template <typename T>
BasicTensor<T> Lstm<T>::cell_backward(const LstmStepCache<T>& cache, LstmState<T>& d_state) {
  const std::size_t n = cache.input.dim(0), hw = hidden_;
  BasicTensor<T> dz({n, 4 * hw});
  for (std::size_t b = 0; b < n; ++b) {
    const T* g = cache.gates.data() + b * 4 * hw;
    T* d = dz.data() + b * 4 * hw;
    for (std::size_t j = 0; j < hw; ++j) {
      const std::size_t k = b * hw + j;
      const T i = g[j], f = g[hw + j], gg = g[2 * hw + j], o = g[3 * hw + j];
      const T tc = cache.cell_tanh[k];
      const T dh = d_state.hidden[k];
      const T dc = d_state.cell[k] + dh * o * (T{1} - tc * tc);
      d[j] = dc * gg * i * (T{1} - i);
      d[hw + j] = dc * cache.previous.cell[k] * f * (T{1} - f);
      d[2 * hw + j] = dc * i * (T{1} - gg * gg);
      d[3 * hw + j] = dh * tc * o * (T{1} - o);
      d_state.cell[k] = dc * f;
    }
  }
  auto dzm = as_matrix(static_cast<const T*>(dz.data()), n, 4 * hw);
  as_matrix(w_input.value.grad().data(), 4 * hw, input_).noalias() +=
      dzm.transpose() * as_matrix(cache.input.data(), n, input_);
  as_matrix(w_hidden.value.grad().data(), 4 * hw, hw).noalias() +=
      dzm.transpose() * as_matrix(cache.previous.hidden.data(), n, hw);
  auto db = bias.value.grad();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t j = 0; j < 4 * hw; ++j) db[j] += dz[b * 4 * hw + j];
  BasicTensor<T> dx({n, input_});
  as_matrix(dx.data(), n, input_).noalias() =
      dzm * as_matrix(static_cast<const T*>(w_input.value.data()), 4 * hw, input_);
  as_matrix(d_state.hidden.data(), n, hw).noalias() =
      dzm * as_matrix(static_cast<const T*>(w_hidden.value.data()), 4 * hw, hw);
  return dx;
}

namespace {
template <typename T>
BasicTensor<T> step_slice(const BasicTensor<T>& steps, std::size_t t) {
  const std::size_t n = steps.dim(1), in = steps.dim(2);
  BasicTensor<T> x({n, in});
  std::copy(steps.data() + t * n * in, steps.data() + (t + 1) * n * in, x.data());
  return x;
}
}  // namespace

template <typename T>
BasicTensor<T> Lstm<T>::forward(const BasicTensor<T>& steps) {
  require_rank(steps.shape(), 3, "lstm");
  const std::size_t w = steps.dim(0), n = steps.dim(1);
  caches_.assign(w, {});
  LstmState<T> state = zero_state(n);
  for (std::size_t t = 0; t < w; ++t) state = cell(step_slice(steps, t), state, &caches_[t]);
  return state.hidden;
}

template <typename T>
BasicTensor<T> Lstm<T>::infer(const BasicTensor<T>& steps) const {
  require_rank(steps.shape(), 3, "lstm");
  const std::size_t w = steps.dim(0), n = steps.dim(1);
  LstmState<T> state = zero_state(n);
  for (std::size_t t = 0; t < w; ++t) state = cell(step_slice(steps, t), state, nullptr);
  return state.hidden;
}

template <typename T>
BasicTensor<T> Lstm<T>::backward(const BasicTensor<T>& d_hidden) {
  if (caches_.empty()) throw UsageError(w_input.name + ": backward called without a cached forward pass");
  const std::size_t w = caches_.size(), n = caches_[0].input.dim(0);
  LstmState<T> d_state = zero_state(n);
  if (d_hidden.shape() != d_state.hidden.shape()) {
    throw ConfigError(w_input.name + ": upstream gradient " + shape_string(d_hidden.shape()) + " has wrong shape");
  }
  d_state.hidden = d_hidden;
  BasicTensor<T> d_steps({w, n, input_});
  for (std::size_t t = w; t-- > 0;) {
    BasicTensor<T> dx = cell_backward(caches_[t], d_state);
    std::copy(dx.data(), dx.data() + dx.size(), d_steps.data() + t * n * input_);
  }
  return d_steps;
}

// ---------------------------------------------------------------- losses

template <typename T>
double mse_loss(const BasicTensor<T>& prediction, std::span<const T> target, BasicTensor<T>* grad) {
  if (prediction.size() != target.size() || target.empty()) {
    throw ConfigError("mse_loss: prediction " + shape_string(prediction.shape()) + " vs " +
                      std::to_string(target.size()) + " targets");
  }
  const double n = static_cast<double>(target.size());
  double loss = 0.0;
  if (grad != nullptr) *grad = BasicTensor<T>(prediction.shape());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double r = static_cast<double>(prediction[i]) - static_cast<double>(target[i]);
    loss += r * r;
    if (grad != nullptr) (*grad)[i] = static_cast<T>(2.0 * r / n);
  }
  return loss / n;
}

template <typename T>
double softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const std::uint8_t> labels,
                             BasicTensor<T>* grad) {
  const Shape& s = logits.shape();
  if (s.size() != 2 && s.size() != 4) throw ConfigError("softmax_cross_entropy: bad logits " + shape_string(s));
  const std::size_t n = s[0], k = s[1], inner = s.size() == 4 ? s[2] * s[3] : 1;
  if (labels.size() != n * inner) {
    throw ConfigError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                      shape_string(s));
  }
  if (grad != nullptr) *grad = BasicTensor<T>(s);
  const double count = static_cast<double>(n * inner);
  double loss = 0.0;
  std::vector<double> p(k);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < inner; ++i) {
      double mx = -1e300;
      for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, static_cast<double>(logits[(b * k + c) * inner + i]));
      double z = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        p[c] = std::exp(static_cast<double>(logits[(b * k + c) * inner + i]) - mx);
        z += p[c];
      }
      const std::size_t label = labels[b * inner + i];
      if (label >= k) throw ConfigError("softmax_cross_entropy: label " + std::to_string(label) + " out of range");
      loss -= std::log(p[label] / z);
      if (grad != nullptr) {
        for (std::size_t c = 0; c < k; ++c) {
          const double d = p[c] / z - (c == label ? 1.0 : 0.0);
          (*grad)[(b * k + c) * inner + i] = static_cast<T>(d / count);
        }
      }
    }
  }
  return loss / count;
}

#define ATN_INSTANTIATE_LAYERS(T)                                                                   \
  template class Conv2d<T>;                                                                         \
  template class BatchNorm<T>;                                                                      \
  template class Dropout<T>;                                                                        \
  template class Linear<T>;                                                                         \
  template class Relu<T>;                                                                           \
  template class Tanh<T>;                                                                           \
  template class Lstm<T>;                                                                           \
  template BasicTensor<T> dropout<T>(const BasicTensor<T>&, double, Mode, std::uint64_t);           \
  template BasicTensor<T> relu<T>(const BasicTensor<T>&);                                           \
  template BasicTensor<T> tanh<T>(const BasicTensor<T>&);                                           \
  template BasicTensor<T> upsample2x<T>(const BasicTensor<T>&);                                     \
  template BasicTensor<T> upsample2x_backward<T>(const BasicTensor<T>&);                            \
  template double mse_loss<T>(const BasicTensor<T>&, std::span<const T>, BasicTensor<T>*);          \
  template double softmax_cross_entropy<T>(const BasicTensor<T>&, std::span<const std::uint8_t>,    \
                                           BasicTensor<T>*);

ATN_INSTANTIATE_LAYERS(float)
ATN_INSTANTIATE_LAYERS(double)

}  // namespace atn
