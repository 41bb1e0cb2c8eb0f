#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "atn/checkpoint.hpp"
#include "atn/errors.hpp"
#include "atn/layers.hpp"
#include "atn/optim.hpp"
#include "gradcheck.hpp"

using namespace atn;

namespace {

constexpr double kGradTolerance = 1e-4;

std::filesystem::path scratch(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "atn_unit" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("tensor_kernels") {

TEST_CASE("tensor shape invariants") {
  TensorD t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK_THROWS_AS(TensorD({2, 2}, std::vector<double>(5)), ConfigError);
  CHECK_THROWS_AS(t.reshape({5, 5}), ConfigError);
  t.ensure_grad();
  CHECK(t.grad().size() == t.size());
  t[3] = std::nan("");
  CHECK_THROWS_AS(t.check_finite("t"), NumericError);
}

TEST_CASE("conv output shape follows floor((H-K)/s)+1") {
  Conv2d<float> conv("c", {6, 24, 5, 2, 0});
  Rng rng(1);
  conv.init(rng);
  Tensor x({1, 6, 64, 64}, 0.1f);
  auto y = conv.forward(x);
  CHECK(y.shape() == Shape{1, 24, 30, 30});
}

TEST_CASE("conv of zeros with zero bias is zero") {
  Conv2d<double> conv("c", {3, 4, 3, 1, 0});
  Rng rng(2);
  conv.init(rng);
  auto y = conv.forward(TensorD({2, 3, 7, 7}));
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("1x1 conv by hand") {
  Conv2d<double> conv("c", {1, 1, 1, 1, 0});
  conv.weight.value[0] = 2.0;
  conv.bias.value[0] = 0.5;
  auto y = conv.forward(TensorD({1, 1, 1, 1}, 3.0));
  CHECK(y[0] == doctest::Approx(6.5));

  // d/dw (w x + b) = x, d/dx = w, d/db = 1 times upstream 1.5
  conv.weight.zero_grad();
  conv.bias.zero_grad();
  auto dx = conv.backward(TensorD({1, 1, 1, 1}, 1.5));
  CHECK(conv.weight.value.grad()[0] == doctest::Approx(4.5));
  CHECK(conv.bias.value.grad()[0] == doctest::Approx(1.5));
  CHECK(dx[0] == doctest::Approx(3.0));
}

TEST_CASE("conv errors") {
  Conv2d<double> conv("c", {3, 4, 5, 1, 0});
  CHECK_THROWS_AS(conv.backward(TensorD({1, 4, 1, 1})), UsageError);
  CHECK_THROWS_AS(conv.forward(TensorD({1, 2, 8, 8})), ConfigError);
  CHECK_THROWS_AS(conv.forward(TensorD({1, 3, 4, 4})), ConfigError);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  Conv2d<double> conv("c", {2, 3, 3, 2, 1});
  Rng rng(3);
  conv.init(rng);
  auto x = testing::random_tensor({2, 2, 9, 9}, rng);
  auto y = conv.forward(x);
  conv.weight.zero_grad();
  conv.bias.zero_grad();
  conv.backward(TensorD(y.shape()));
  for (double g : conv.weight.value.grad()) CHECK(g == 0.0);
  for (double g : conv.bias.value.grad()) CHECK(g == 0.0);
}

TEST_CASE("finite-difference gradient checks") {
  const auto results = testing::gradient_suite(20240611, 2);
  CHECK(results.size() >= 20);
  for (const auto& r : results) {
    INFO(r.name);
    CHECK(r.entries > 0);
    CHECK(r.max_relative < kGradTolerance);
  }
}

TEST_CASE("batchnorm") {
  BatchNorm<double> bn("bn", 1);
  SUBCASE("two-sample batch normalizes to +-1") {
    auto y = bn.forward(TensorD({2, 1}, std::vector<double>{-1.0, 1.0}), Mode::Train);
    CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-4));
  }
  SUBCASE("constant channel maps to zero") {
    auto y = bn.forward(TensorD({4, 1, 2, 2}, 3.0), Mode::Train);
    for (double v : y.values()) CHECK(v == doctest::Approx(0.0));
  }
  SUBCASE("train output has zero mean and unit variance") {
    BatchNorm<double> bn3("bn", 3);
    Rng rng(4);
    auto y = bn3.forward(testing::random_tensor({8, 3, 4, 4}, rng), Mode::Train);
    for (std::size_t c = 0; c < 3; ++c) {
      double sum = 0, sq = 0;
      std::size_t n = 0;
      for (std::size_t b = 0; b < 8; ++b)
        for (std::size_t i = 0; i < 16; ++i) {
          const double v = y[(b * 3 + c) * 16 + i];
          sum += v;
          sq += v * v;
          ++n;
        }
      CHECK(sum / n == doctest::Approx(0.0).epsilon(1e-9));
      CHECK(sq / n == doctest::Approx(1.0).epsilon(1e-3));
    }
  }
  SUBCASE("batch of one in train mode is a usage error") {
    CHECK_THROWS_AS(bn.forward(TensorD({1, 1}), Mode::Train), UsageError);
  }
  SUBCASE("infer uses running statistics and is repeatable") {
    bn.forward(TensorD({2, 1}, std::vector<double>{4.0, 6.0}), Mode::Train);
    TensorD x({3, 1}, std::vector<double>{1.0, 2.0, 3.0});
    auto a = bn.forward(x, Mode::Infer);
    auto b = bn.forward(x, Mode::Infer);
    CHECK(a == b);
    // running mean 0.9*0 + 0.1*5, running var 0.9*1 + 0.1*2 (unbiased)
    const double mean = 0.5, var = 1.1;
    CHECK(a[0] == doctest::Approx((1.0 - mean) / std::sqrt(var + 1e-5)));
  }
}

TEST_CASE("dropout") {
  Rng rng(5);
  auto x = testing::random_tensor({100000}, rng);
  SUBCASE("rate 0 and infer mode are identity") {
    CHECK(dropout(x, 0.0, Mode::Train, 9) == x);
    CHECK(dropout(x, 0.5, Mode::Infer, 9) == x);
  }
  SUBCASE("rate 0.5 keeps half and preserves the mean") {
    TensorD ones({100000}, 1.0);
    auto y = dropout(ones, 0.5, Mode::Train, 11);
    std::size_t kept = 0;
    double sum = 0;
    for (double v : y.values()) {
      kept += v != 0.0;
      sum += v;
      if (v != 0.0) CHECK(v == 2.0);
    }
    CHECK(std::abs(kept / 1e5 - 0.5) <= 0.01);
    CHECK(std::abs(sum / 1e5 - 1.0) <= 0.02);
  }
  SUBCASE("same seed gives the same mask") {
    CHECK(dropout(x, 0.3, Mode::Train, 42) == dropout(x, 0.3, Mode::Train, 42));
    CHECK_FALSE(dropout(x, 0.3, Mode::Train, 42) == dropout(x, 0.3, Mode::Train, 43));
  }
  SUBCASE("rate outside [0,1)") {
    CHECK_THROWS_AS(dropout(x, 1.0, Mode::Train, 1), ConfigError);
    CHECK_THROWS_AS(dropout(x, -0.1, Mode::Train, 1), ConfigError);
    CHECK_THROWS_AS(Dropout<double>(1.5, 1), ConfigError);
  }
}

TEST_CASE("activations and fully connected by hand") {
  TensorD x({2}, std::vector<double>{-3.0, 3.0});
  auto r = relu(x);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 3.0);
  CHECK(atn::tanh(TensorD({1}, 0.0))[0] == 0.0);

  Linear<double> fc("fc", 3, 2);
  fc.weight.value = TensorD({2, 3}, std::vector<double>{1, 2, 3, -1, 0, 4});
  fc.bias.value = TensorD({2}, std::vector<double>{0.5, -2});
  auto y = fc.forward(TensorD({2, 3}, std::vector<double>{1, 0, 2, -1, 1, 1}));
  // [1 0 2]·[1 2 3] + .5 = 7.5; [1 0 2]·[-1 0 4] - 2 = 5; [-1 1 1]·[1 2 3] + .5 = 4.5; [-1 1 1]·[-1 0 4] - 2 = 3
  CHECK(y == TensorD({2, 2}, std::vector<double>{7.5, 5, 4.5, 3}));
}

TEST_CASE("lstm cell") {
  Lstm<double> lstm("lstm", 4, 5);
  auto zero = lstm.cell(TensorD({2, 4}), lstm.zero_state(2));
  for (double v : zero.hidden.values()) CHECK(v == 0.0);

  Rng rng(6);
  lstm.init(rng);
  auto steps = testing::random_tensor({3, 2, 4}, rng);
  for (double& v : steps.values()) v *= 20.0;
  auto h = lstm.forward(steps);
  for (double v : h.values()) CHECK(std::abs(v) <= 1.0);

  CHECK_THROWS_AS(lstm.cell(TensorD({2, 3}), lstm.zero_state(2)), ConfigError);
  Lstm<double> fresh("lstm", 4, 5);
  CHECK_THROWS_AS(fresh.backward(TensorD({2, 5})), UsageError);
}

TEST_CASE("adam") {
  OptimizerConfig config;
  SUBCASE("first step with unit gradient moves by the learning rate") {
    Parameter<double> p("p", {10});
    p.value.fill(0.25);
    p.zero_grad();
    for (double& g : p.value.grad()) g = 1.0;
    std::vector<Parameter<double>*> params{&p};
    adam_step<double>(params, config, config.learning_rate);
    CHECK(p.step_count == 1);
    // m_hat = 1, v_hat = 1, step = lr / (1 + eps)
    for (double v : p.value.values()) CHECK(v == doctest::Approx(0.25 - 1e-3 / (1 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    Parameter<double> p("p", {4});
    p.value.fill(-1.5);
    std::vector<Parameter<double>*> params{&p};
    for (int i = 0; i < 50; ++i) {
      zero_grads<double>(params);
      adam_step<double>(params, config, config.learning_rate);
    }
    for (double v : p.value.values()) CHECK(v == -1.5);
    CHECK(p.step_count == 50);
  }
  SUBCASE("matches an independent recurrence over several steps") {
    Parameter<double> p("p", {1});
    std::vector<Parameter<double>*> params{&p};
    double value = 0.0, m = 0.0, v = 0.0;
    const double grads[] = {0.3, -1.2, 2.0, 0.01, -0.5};
    for (int t = 1; t <= 5; ++t) {
      const double g = grads[t - 1];
      p.zero_grad();
      p.value.grad()[0] = g;
      adam_step<double>(params, config, 0.01);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1 - std::pow(0.9, t));
      const double vh = v / (1 - std::pow(0.999, t));
      value -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p.value[0] == doctest::Approx(value).epsilon(1e-12));
    }
  }
  SUBCASE("non-finite gradient names the parameter and touches nothing") {
    Parameter<double> a("good", {2});
    Parameter<double> b("broken", {2});
    a.zero_grad();
    b.zero_grad();
    a.value.grad()[0] = 1.0;
    b.value.grad()[1] = std::nan("");
    std::vector<Parameter<double>*> params{&a, &b};
    try {
      adam_step<double>(params, config, 1e-3);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("broken") != std::string::npos);
    }
    CHECK(a.value[0] == 0.0);
    CHECK(a.step_count == 0);
  }
  SUBCASE("identical runs are bit-identical") {
    auto run = [&] {
      Linear<double> fc("fc", 3, 2);
      Rng rng(7);
      fc.init(rng);
      ParamRefs<double> params;
      fc.collect(params);
      Rng data(8);
      for (int i = 0; i < 20; ++i) {
        zero_grads<double>(params);
        auto y = fc.forward(testing::random_tensor({4, 3}, data));
        fc.backward(testing::random_tensor(y.shape(), data));
        adam_step<double>(params, config, 1e-3);
      }
      return fc.weight.value;
    };
    CHECK(run() == run());
  }
}

TEST_CASE("plateau scheduler") {
  OptimizerConfig config;
  const std::vector<double> decreasing{5, 4, 3, 2, 1, 0.5, 0.2};
  CHECK(plateau_scheduler(decreasing, config) == 1e-3);
  const std::vector<double> flat{2, 2, 2, 2};
  CHECK(plateau_scheduler(flat, config) == 0.5e-3);
  const std::vector<double> two{2, 2, 2, 2, 2, 2, 2};
  CHECK(plateau_scheduler(two, config) == 0.25e-3);
  // Improvements smaller than min_delta count as stale.
  const std::vector<double> creeping{2, 1.9995, 1.9992, 1.9991};
  CHECK(plateau_scheduler(creeping, config) == 0.5e-3);

  SUBCASE("rate never increases and each change is an exact halving") {
    Rng rng(9);
    PlateauScheduler s(config);
    double previous = s.learning_rate();
    for (int epoch = 0; epoch < 200; ++epoch) {
      const double lr = s.observe(uniform(rng, 0.5, 2.0));
      CHECK((lr == previous || lr == previous * 0.5));
      previous = lr;
    }
  }
}

TEST_CASE("checkpoint round trip") {
  const auto dir = scratch("checkpoint");
  Checkpoint ck;
  ck.kind = "policy";
  ck.seed = 77;
  ck.config = {{"model.window", "3"}, {"model.variant", "atn_base"}};
  ck.state = {{"epoch", "4"}};
  ck.tensors.emplace_back("w", Tensor({2, 3}, std::vector<float>{1, -2, 3.5f, 0, 1e-7f, -1e7f}));
  ck.tensors.emplace_back("b", Tensor({1}, 0.25f));
  write_checkpoint(ck, dir / "a.ckpt");

  std::ifstream in(dir / "a.ckpt", std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  CHECK(std::string(magic, 8) == "ATNCKPT1");

  const auto back = read_checkpoint(dir / "a.ckpt");
  CHECK(back.kind == "policy");
  CHECK(back.seed == 77);
  CHECK(back.state_value("epoch") == "4");
  CHECK(back.at("w") == ck.tensors[0].second);
  CHECK(back.at("b") == ck.tensors[1].second);
  CHECK_NOTHROW(verify_config(back, ck.config));
  auto other = ck.config;
  other[0].second = "5";
  CHECK_THROWS_AS(verify_config(back, other), FormatError);
  CHECK(config_hash(ck.config) != config_hash(other));

  {
    std::ofstream bad(dir / "bad.ckpt", std::ios::binary);
    bad << "NOTACKPT and some more bytes";
  }
  CHECK_THROWS_AS(read_checkpoint(dir / "bad.ckpt"), FormatError);
  CHECK_THROWS_AS(read_checkpoint(dir / "missing.ckpt"), Error);
}

TEST_CASE("store and load parameters with optimizer state") {
  Linear<float> a("fc", 3, 2);
  Rng rng(10);
  a.init(rng);
  a.weight.step_count = 12;
  a.weight.first_moment.fill(0.5f);
  ParamRefs<float> pa;
  a.collect(pa);
  Checkpoint ck;
  store_parameters(ck, pa, {}, true);

  Linear<float> b("fc", 3, 2);
  ParamRefs<float> pb;
  b.collect(pb);
  load_parameters(ck, pb, {}, true);
  CHECK(b.weight.value == a.weight.value);
  CHECK(b.weight.first_moment == a.weight.first_moment);
  CHECK(b.weight.step_count == 12);

  Linear<float> wrong("fc", 4, 2);
  ParamRefs<float> pw;
  wrong.collect(pw);
  CHECK_THROWS_AS(load_parameters(ck, pw, {}, false), FormatError);
}

}  // TEST_SUITE
