#pragma once

#include <span>
#include <vector>

#include "atn/layers.hpp"

namespace atn {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int plateau_patience = 3;
  double min_delta = 1e-3;  // degrees^2
  double halving_factor = 0.5;

  void validate() const;
};

// One bias-corrected Adam update over every parameter. Throws NumericError
// naming the parameter when its gradient holds NaN/Inf; no parameter is
// touched in that case.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const OptimizerConfig& config,
               double learning_rate);

template <typename T>
void zero_grads(std::span<Parameter<T>* const> params) {
  for (auto* p : params) p->zero_grad();
}

// Halves the learning rate whenever the best validation loss has not
// improved by more than min_delta for `plateau_patience` consecutive epochs.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(const OptimizerConfig& config);

  // Feeds one epoch's validation loss; returns the learning rate to use next.
  double observe(double validation_loss);

  double learning_rate() const { return learning_rate_; }
  double best() const { return best_; }
  int epochs_since_improvement() const { return stale_; }

  // Restores state when resuming a run.
  void restore(double learning_rate, double best, int stale) {
    learning_rate_ = learning_rate;
    best_ = best;
    stale_ = stale;
  }

 private:
  double learning_rate_;
  double best_;
  int stale_ = 0;
  int patience_;
  double min_delta_;
  double factor_;
};

// Replays a whole validation history from the initial learning rate.
double plateau_scheduler(std::span<const double> history, const OptimizerConfig& config);

}  // namespace atn
