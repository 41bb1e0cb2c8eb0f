#include "atn/optim.hpp"

#include <cmath>
#include <limits>

namespace atn {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in (0,1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in (0,1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (plateau_patience < 1) throw ConfigError("plateau_patience must be >= 1");
  if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be non-negative");
  if (halving_factor != 0.5) throw ConfigError("halving_factor is fixed at 0.5");
}

template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const OptimizerConfig& config, double learning_rate) {
  for (const auto* p : params) {
    if (!p->value.has_grad()) continue;
    for (const T g : p->value.grad()) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter '" + p->name + "'");
    }
  }
  for (auto* p : params) {
    p->value.ensure_grad();
    p->step_count += 1;
    const double t = static_cast<double>(p->step_count);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    auto g = p->value.grad();
    auto v = p->value.values();
    auto m1 = p->first_moment.values();
    auto m2 = p->second_moment.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double gi = g[i];
      const double m = config.beta1 * m1[i] + (1.0 - config.beta1) * gi;
      const double s = config.beta2 * m2[i] + (1.0 - config.beta2) * gi * gi;
      m1[i] = static_cast<T>(m);
      m2[i] = static_cast<T>(s);
      const double update = learning_rate * (m / c1) / (std::sqrt(s / c2) + config.epsilon);
      v[i] = static_cast<T>(v[i] - update);
    }
  }
}

template void adam_step<float>(std::span<Parameter<float>* const>, const OptimizerConfig&, double);
template void adam_step<double>(std::span<Parameter<double>* const>, const OptimizerConfig&, double);

PlateauScheduler::PlateauScheduler(const OptimizerConfig& config)
    : learning_rate_(config.learning_rate),
      best_(std::numeric_limits<double>::infinity()),
      patience_(config.plateau_patience),
      min_delta_(config.min_delta),
      factor_(config.halving_factor) {
  config.validate();
}

double PlateauScheduler::observe(double validation_loss) {
  if (validation_loss < best_ - min_delta_) {
    best_ = validation_loss;
    stale_ = 0;
    return learning_rate_;
  }
  if (++stale_ >= patience_) {
    learning_rate_ *= factor_;
    stale_ = 0;
  }
  return learning_rate_;
}

double plateau_scheduler(std::span<const double> history, const OptimizerConfig& config) {
  PlateauScheduler scheduler(config);
  for (const double loss : history) scheduler.observe(loss);
  return scheduler.learning_rate();
}

}  // namespace atn
