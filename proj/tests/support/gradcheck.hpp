#pragma once

// Central finite-difference gradient checks for every differentiable layer,
// in double precision. Shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "atn/layers.hpp"
#include "atn/rng.hpp"

namespace atn::testing {

inline constexpr double kFiniteDifferenceStep = 1e-6;

struct GradCheck {
  std::string name;       // layer and shape
  double max_relative;    // worst over the checked tensors
  std::size_t entries;    // finite differences taken
};

// ||a - b|| / (||a|| + ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nb);
  return denom < 1e-300 ? 0.0 : std::sqrt(diff) / denom;
}

inline TensorD random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(shape);
  for (auto& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

// |v| in [0.1, 1]: ReLU kinks stay outside +-h.
inline TensorD random_away_from_zero(const Shape& shape, Rng& rng) {
  TensorD t(shape);
  for (auto& v : t.values()) v = (uniform01(rng) < 0.5 ? -1.0 : 1.0) * uniform(rng, 0.1, 1.0);
  return t;
}

inline double dot(const TensorD& a, const TensorD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<std::size_t> pick(std::size_t n, std::size_t cap, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (n <= cap) return idx;
  for (std::size_t i = 0; i < cap; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n - i));
    std::swap(idx[i], idx[std::min(j, n - 1)]);
  }
  idx.resize(cap);
  return idx;
}

// Compares `analytic` against central differences of `loss` with respect to
// the entries of `values` (a sample of at most `cap`).
inline double check_tensor(std::span<double> values, std::span<const double> analytic, const std::function<double()>& loss,
                           Rng& rng, std::size_t cap, std::size_t& entries) {
  const auto idx = pick(values.size(), cap, rng);
  std::vector<double> a, n;
  for (std::size_t i : idx) {
    const double keep = values[i];
    values[i] = keep + kFiniteDifferenceStep;
    const double up = loss();
    values[i] = keep - kFiniteDifferenceStep;
    const double down = loss();
    values[i] = keep;
    n.push_back((up - down) / (2.0 * kFiniteDifferenceStep));
    a.push_back(analytic[i]);
  }
  entries += idx.size();
  return relative_error(a, n);
}

struct Checked {
  std::span<double> values;
  std::vector<double> analytic;
};

// Runs forward+backward once for the analytic gradients, then checks each
// tensor by finite differences of loss = <r, y>.
inline GradCheck run_check(std::string name, const std::function<TensorD()>& forward,
                           const std::function<std::vector<Checked>(const TensorD& r)>& backward, Rng& rng,
                           std::size_t cap = 48) {
  const TensorD y0 = forward();
  const TensorD r = random_tensor(y0.shape(), rng);
  const auto checked = backward(r);
  auto loss = [&] { return dot(forward(), r); };
  GradCheck out{std::move(name), 0.0, 0};
  for (const auto& c : checked) {
    out.max_relative = std::max(out.max_relative, check_tensor(c.values, c.analytic, loss, rng, cap, out.entries));
  }
  return out;
}

inline std::vector<double> copy(std::span<const double> s) { return {s.begin(), s.end()}; }
inline std::vector<double> param_grad(Parameter<double>& p) { return copy(p.value.grad()); }

inline GradCheck check_conv(Rng& rng) {
  const std::size_t k = std::array<std::size_t, 3>{1, 3, 5}[static_cast<std::size_t>(uniform01(rng) * 3)];
  Conv2dSpec spec{1 + static_cast<std::size_t>(uniform01(rng) * 3), 1 + static_cast<std::size_t>(uniform01(rng) * 3), k,
                  1 + static_cast<std::size_t>(uniform01(rng) * 2), static_cast<std::size_t>(uniform01(rng) * 3)};
  const std::size_t h = k + static_cast<std::size_t>(uniform01(rng) * 6), w = k + static_cast<std::size_t>(uniform01(rng) * 6);
  const std::size_t n = 1 + static_cast<std::size_t>(uniform01(rng) * 2);
  Conv2d<double> conv("conv", spec);
  conv.init(rng);
  for (auto& b : conv.bias.value.values()) b = uniform(rng, -0.5, 0.5);
  TensorD x = random_tensor({n, spec.in_channels, h, w}, rng);
  return run_check(
      fmt::format("conv2d x[{},{},{},{}] k{} s{} p{} -> {}", n, spec.in_channels, h, w, k, spec.stride, spec.padding,
                  spec.out_channels),
      [&] { return conv.forward(x); },
      [&](const TensorD& r) {
        conv.weight.zero_grad();
        conv.bias.zero_grad();
        conv.forward(x);
        TensorD dx = conv.backward(r);
        return std::vector<Checked>{{x.values(), copy(dx.values())},
                                    {conv.weight.value.values(), param_grad(conv.weight)},
                                    {conv.bias.value.values(), param_grad(conv.bias)}};
      },
      rng);
}

inline GradCheck check_batchnorm(Rng& rng, bool spatial) {
  const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * 3), c = 1 + static_cast<std::size_t>(uniform01(rng) * 4);
  Shape shape = spatial ? Shape{n, c, 1 + static_cast<std::size_t>(uniform01(rng) * 4), 1 + static_cast<std::size_t>(uniform01(rng) * 4)}
                        : Shape{n, c};
  BatchNorm<double> bn("bn", c);
  for (auto& g : bn.gamma.value.values()) g = uniform(rng, 0.5, 1.5);
  for (auto& b : bn.beta.value.values()) b = uniform(rng, -0.5, 0.5);
  TensorD x = random_tensor(shape, rng, -2.0, 2.0);
  return run_check(
      fmt::format("batchnorm x{}", shape_string(shape)), [&] { return bn.forward(x, Mode::Train); },
      [&](const TensorD& r) {
        bn.gamma.zero_grad();
        bn.beta.zero_grad();
        bn.forward(x, Mode::Train);
        TensorD dx = bn.backward(r);
        return std::vector<Checked>{{x.values(), copy(dx.values())},
                                    {bn.gamma.value.values(), param_grad(bn.gamma)},
                                    {bn.beta.value.values(), param_grad(bn.beta)}};
      },
      rng);
}

inline GradCheck check_linear(Rng& rng) {
  const std::size_t n = 1 + static_cast<std::size_t>(uniform01(rng) * 4), in = 1 + static_cast<std::size_t>(uniform01(rng) * 8),
                    out = 1 + static_cast<std::size_t>(uniform01(rng) * 6);
  Linear<double> lin("fc", in, out);
  lin.init(rng);
  for (auto& b : lin.bias.value.values()) b = uniform(rng, -0.5, 0.5);
  TensorD x = random_tensor({n, in}, rng);
  return run_check(
      fmt::format("linear [{},{}] -> {}", n, in, out), [&] { return lin.forward(x); },
      [&](const TensorD& r) {
        lin.weight.zero_grad();
        lin.bias.zero_grad();
        lin.forward(x);
        TensorD dx = lin.backward(r);
        return std::vector<Checked>{{x.values(), copy(dx.values())},
                                    {lin.weight.value.values(), param_grad(lin.weight)},
                                    {lin.bias.value.values(), param_grad(lin.bias)}};
      },
      rng);
}

inline GradCheck check_relu(Rng& rng) {
  const Shape shape{1 + static_cast<std::size_t>(uniform01(rng) * 3), 2 + static_cast<std::size_t>(uniform01(rng) * 6)};
  Relu<double> relu;
  TensorD x = random_away_from_zero(shape, rng);
  return run_check(
      fmt::format("relu x{}", shape_string(shape)), [&] { return relu.forward(x); },
      [&](const TensorD& r) {
        relu.forward(x);
        return std::vector<Checked>{{x.values(), copy(relu.backward(r).values())}};
      },
      rng);
}

inline GradCheck check_tanh(Rng& rng) {
  const Shape shape{1 + static_cast<std::size_t>(uniform01(rng) * 3), 2 + static_cast<std::size_t>(uniform01(rng) * 6)};
  Tanh<double> t;
  TensorD x = random_tensor(shape, rng, -2.0, 2.0);
  return run_check(
      fmt::format("tanh x{}", shape_string(shape)), [&] { return t.forward(x); },
      [&](const TensorD& r) {
        t.forward(x);
        return std::vector<Checked>{{x.values(), copy(t.backward(r).values())}};
      },
      rng);
}

inline GradCheck check_dropout(Rng& rng) {
  const Shape shape{2 + static_cast<std::size_t>(uniform01(rng) * 3), 3 + static_cast<std::size_t>(uniform01(rng) * 6)};
  const double rate = uniform(rng, 0.1, 0.6);
  const std::uint64_t seed = rng();
  Dropout<double> d(rate, seed);
  TensorD x = random_tensor(shape, rng);
  // Same mask on every evaluation.
  return run_check(
      fmt::format("dropout({:.2f}) x{}", rate, shape_string(shape)),
      [&] {
        d.reseed(seed);
        return d.forward(x, Mode::Train);
      },
      [&](const TensorD& r) {
        d.reseed(seed);
        d.forward(x, Mode::Train);
        return std::vector<Checked>{{x.values(), copy(d.backward(r).values())}};
      },
      rng);
}

inline GradCheck check_lstm(Rng& rng) {
  const std::size_t w = 1 + static_cast<std::size_t>(uniform01(rng) * 4), n = 1 + static_cast<std::size_t>(uniform01(rng) * 3),
                    in = 1 + static_cast<std::size_t>(uniform01(rng) * 5), hid = 1 + static_cast<std::size_t>(uniform01(rng) * 5);
  Lstm<double> lstm("lstm", in, hid);
  lstm.init(rng);
  TensorD steps = random_tensor({w, n, in}, rng);
  return run_check(
      fmt::format("lstm w{} [{},{}] -> {}", w, n, in, hid), [&] { return lstm.forward(steps); },
      [&](const TensorD& r) {
        lstm.w_input.zero_grad();
        lstm.w_hidden.zero_grad();
        lstm.bias.zero_grad();
        lstm.forward(steps);
        TensorD ds = lstm.backward(r);
        return std::vector<Checked>{{steps.values(), copy(ds.values())},
                                    {lstm.w_input.value.values(), param_grad(lstm.w_input)},
                                    {lstm.w_hidden.value.values(), param_grad(lstm.w_hidden)},
                                    {lstm.bias.value.values(), param_grad(lstm.bias)}};
      },
      rng);
}

inline GradCheck check_upsample(Rng& rng) {
  const Shape shape{1 + static_cast<std::size_t>(uniform01(rng) * 2), 1 + static_cast<std::size_t>(uniform01(rng) * 3),
                    1 + static_cast<std::size_t>(uniform01(rng) * 4), 1 + static_cast<std::size_t>(uniform01(rng) * 4)};
  TensorD x = random_tensor(shape, rng);
  return run_check(
      fmt::format("upsample2x x{}", shape_string(shape)), [&] { return upsample2x(x); },
      [&](const TensorD& r) { return std::vector<Checked>{{x.values(), copy(upsample2x_backward(r).values())}}; }, rng);
}

inline GradCheck check_mse(Rng& rng) {
  const std::size_t n = 1 + static_cast<std::size_t>(uniform01(rng) * 8);
  TensorD pred = random_tensor({n, 1}, rng, -5.0, 5.0);
  const TensorD target = random_tensor({n}, rng, -5.0, 5.0);
  return run_check(
      fmt::format("mse_loss n{}", n),
      [&] { return TensorD({1}, mse_loss<double>(pred, target.values(), nullptr)); },
      [&](const TensorD& r) {
        TensorD g;
        mse_loss<double>(pred, target.values(), &g);
        for (auto& v : g.values()) v *= r[0];
        return std::vector<Checked>{{pred.values(), copy(g.values())}};
      },
      rng);
}

inline GradCheck check_cross_entropy(Rng& rng, bool spatial) {
  const std::size_t n = 1 + static_cast<std::size_t>(uniform01(rng) * 3), k = 2 + static_cast<std::size_t>(uniform01(rng) * 8);
  const Shape shape = spatial ? Shape{n, k, 1 + static_cast<std::size_t>(uniform01(rng) * 3), 1 + static_cast<std::size_t>(uniform01(rng) * 3)}
                              : Shape{n, k};
  TensorD logits = random_tensor(shape, rng, -3.0, 3.0);
  std::vector<std::uint8_t> labels(spatial ? n * shape[2] * shape[3] : n);
  for (auto& l : labels) l = static_cast<std::uint8_t>(uniform01(rng) * static_cast<double>(k));
  return run_check(
      fmt::format("softmax_cross_entropy x{}", shape_string(shape)),
      [&] { return TensorD({1}, softmax_cross_entropy<double>(logits, std::span<const std::uint8_t>(labels), nullptr)); },
      [&](const TensorD& r) {
        TensorD g;
        softmax_cross_entropy<double>(logits, std::span<const std::uint8_t>(labels), &g);
        for (auto& v : g.values()) v *= r[0];
        return std::vector<Checked>{{logits.values(), copy(g.values())}};
      },
      rng);
}

// `rounds` random shapes of each of the 12 layer kinds.
inline std::vector<GradCheck> gradient_suite(std::uint64_t seed, std::size_t rounds) {
  Rng rng(seed);
  std::vector<GradCheck> out;
  for (std::size_t i = 0; i < rounds; ++i) {
    out.push_back(check_conv(rng));
    out.push_back(check_batchnorm(rng, false));
    out.push_back(check_batchnorm(rng, true));
    out.push_back(check_linear(rng));
    out.push_back(check_relu(rng));
    out.push_back(check_tanh(rng));
    out.push_back(check_dropout(rng));
    out.push_back(check_lstm(rng));
    out.push_back(check_upsample(rng));
    out.push_back(check_mse(rng));
    out.push_back(check_cross_entropy(rng, false));
    out.push_back(check_cross_entropy(rng, true));
  }
  return out;
}

}  // namespace atn::testing
