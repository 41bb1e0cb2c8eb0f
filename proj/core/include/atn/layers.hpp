#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "atn/rng.hpp"
#include "atn/tensor.hpp"

namespace atn {

enum class Mode { Train, Infer };

// Trainable tensor plus Adam state. The gradient lives in value.grad().
template <typename T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> first_moment;
  BasicTensor<T> second_moment;
  std::uint64_t step_count = 0;

  Parameter() = default;
  Parameter(std::string n, Shape shape)
      : name(std::move(n)),
        value(shape),
        first_moment(shape),
        second_moment(shape) {}

  void zero_grad() {
    value.ensure_grad();
    value.zero_grad();
  }
};

template <typename T>
using ParamRefs = std::vector<Parameter<T>*>;

// Non-trainable persistent tensor (batchnorm running statistics).
template <typename T>
struct NamedBuffer {
  std::string name;
  BasicTensor<T>* tensor;
};

template <typename T>
using BufferRefs = std::vector<NamedBuffer<T>>;

struct Conv2dSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// 2-D convolution over NCHW input, im2col + GEMM.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, Conv2dSpec spec);

  void init(Rng& rng);  // He-normal weights, zero bias
  Shape output_shape(const Shape& input) const;

  BasicTensor<T> forward(const BasicTensor<T>& x);
  BasicTensor<T> infer(const BasicTensor<T>& x) const;
  BasicTensor<T> backward(const BasicTensor<T>& dy);
  // Accumulates parameter gradients only.
  void backward_weights(const BasicTensor<T>& dy);

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
  const Conv2dSpec& spec() const { return spec_; }

  Parameter<T> weight;  // [out, in, k, k]
  Parameter<T> bias;    // [out]

 private:
  BasicTensor<T> run(const BasicTensor<T>& x, std::vector<T>& cols) const;
  BasicTensor<T> backward_impl(const BasicTensor<T>& dy, bool input_grad);

  Conv2dSpec spec_;
  std::vector<T> cols_;
  Shape input_shape_;
  bool cached_ = false;
};

// Per-channel batch normalization over [N,C] or [N,C,H,W].
template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::string name, std::size_t channels, double momentum = 0.1,
            double epsilon = 1e-5);

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode);
  BasicTensor<T> infer(const BasicTensor<T>& x) const;
  BasicTensor<T> backward(const BasicTensor<T>& dy);

  void collect(ParamRefs<T>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
  void collect_buffers(BufferRefs<T>& out);

  Parameter<T> gamma;
  Parameter<T> beta;
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;

 private:
  std::size_t channels_ = 0;
  double momentum_ = 0.1;
  double epsilon_ = 1e-5;
  Mode mode_ = Mode::Infer;
  BasicTensor<T> xhat_;
  std::vector<T> inv_std_;
  bool cached_ = false;
};

// Inverted dropout: survivors are scaled by 1/(1-rate); identity in Infer.
template <typename T>
class Dropout {
 public:
  Dropout() = default;
  Dropout(double rate, std::uint64_t seed);

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode);
  BasicTensor<T> backward(const BasicTensor<T>& dy) const;
  void reseed(std::uint64_t seed) { rng_.seed(seed); }
  double rate() const { return rate_; }

 private:
  double rate_ = 0.0;
  Rng rng_;
  std::vector<T> mask_;
  bool cached_ = false;
};

// Stateless form: the mask depends only on (shape, rate, seed).
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double rate, Mode mode,
                       std::uint64_t seed);

// y = x W^T + b with x [N, in], W [out, in].
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out);

  void init(Rng& rng, double gain = 2.0);
  BasicTensor<T> forward(const BasicTensor<T>& x);
  BasicTensor<T> infer(const BasicTensor<T>& x) const;
  BasicTensor<T> backward(const BasicTensor<T>& dy);

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  BasicTensor<T> input_;
  bool cached_ = false;
};

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& x);

template <typename T>
class Relu {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& x);
  BasicTensor<T> backward(const BasicTensor<T>& dy) const;

 private:
  BasicTensor<T> output_;
};

template <typename T>
class Tanh {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& x);
  BasicTensor<T> backward(const BasicTensor<T>& dy) const;

 private:
  BasicTensor<T> output_;
};

// Nearest-neighbour 2x upsampling of NCHW input.
template <typename T>
BasicTensor<T> upsample2x(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> upsample2x_backward(const BasicTensor<T>& dy);

template <typename T>
struct LstmState {
  BasicTensor<T> hidden;  // [N, H]
  BasicTensor<T> cell;    // [N, H]
};

template <typename T>
struct LstmStepCache {
  BasicTensor<T> input;
  LstmState<T> previous;
  BasicTensor<T> gates;  // post-activation i, f, g, o blocks: [N, 4H]
  BasicTensor<T> cell_tanh;
};

// Standard LSTM (input, forget, cell, output gates) unrolled over a window.
template <typename T>
class Lstm {
 public:
  Lstm() = default;
  Lstm(std::string name, std::size_t input_width, std::size_t hidden_width);

  void init(Rng& rng);  // uniform(-1/sqrt(H), 1/sqrt(H)), forget bias 1
  std::size_t input_width() const { return input_; }
  std::size_t hidden_width() const { return hidden_; }

  // One cell step. When cache is non-null it receives what backward needs.
  LstmState<T> cell(const BasicTensor<T>& x, const LstmState<T>& state,
                    LstmStepCache<T>* cache = nullptr) const;
  // Returns d/dx and accumulates parameter gradients; d_state is updated
  // in place from d(state') to d(state).
  BasicTensor<T> cell_backward(const LstmStepCache<T>& cache, LstmState<T>& d_state);

  LstmState<T> zero_state(std::size_t batch) const;

  // steps: [w, N, input] oldest first. Returns the final hidden state [N, H].
  BasicTensor<T> forward(const BasicTensor<T>& steps);
  BasicTensor<T> infer(const BasicTensor<T>& steps) const;
  // Backpropagation through all w steps; returns d(steps) [w, N, input].
  BasicTensor<T> backward(const BasicTensor<T>& d_hidden);

  void collect(ParamRefs<T>& out) {
    out.push_back(&w_input);
    out.push_back(&w_hidden);
    out.push_back(&bias);
  }

  Parameter<T> w_input;   // [4H, input]
  Parameter<T> w_hidden;  // [4H, H]
  Parameter<T> bias;      // [4H]

 private:
  std::size_t input_ = 0;
  std::size_t hidden_ = 0;
  std::vector<LstmStepCache<T>> caches_;
};

// Mean squared error over a [N] or [N,1] prediction. Writes dL/dpred when
// grad is non-null.
template <typename T>
double mse_loss(const BasicTensor<T>& prediction, std::span<const T> target,
                BasicTensor<T>* grad);

// Mean per-pixel softmax cross-entropy over logits [N,K,H,W] (or [N,K]).
template <typename T>
double softmax_cross_entropy(const BasicTensor<T>& logits,
                             std::span<const std::uint8_t> labels,
                             BasicTensor<T>* grad);

}  // namespace atn
