#include "atn/metrics.hpp"

#include <cmath>
#include <utility>

#include <fmt/format.h>

#include "atn/errors.hpp"

namespace atn {

void PredictionSeries::validate() const {
  if (truth.size() != predicted.size()) {
    throw UsageError(fmt::format("series has {} ground-truth but {} predicted values", truth.size(), predicted.size()));
  }
  if (!speed_mps.empty() && speed_mps.size() != truth.size()) throw UsageError("speed column length differs from the series");
  for (std::size_t i = 0; i < episode_starts.size(); ++i) {
    if (episode_starts[i] >= truth.size() || (i > 0 && episode_starts[i] <= episode_starts[i - 1])) {
      throw UsageError("episode starts must be increasing indices inside the series");
    }
  }
  if (!episode_starts.empty() && episode_starts.front() != 0) throw UsageError("the first episode must start at 0");
}

std::vector<std::pair<std::size_t, std::size_t>> PredictionSeries::episodes() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (truth.empty()) return out;
  if (episode_starts.empty()) return {{0, truth.size()}};
  for (std::size_t i = 0; i < episode_starts.size(); ++i) {
    const std::size_t end = i + 1 < episode_starts.size() ? episode_starts[i + 1] : truth.size();
    out.emplace_back(episode_starts[i], end);
  }
  return out;
}

double PredictionSeries::distance_m() const {
  double d = 0.0;
  for (double v : speed_mps) d += v * frame_dt;
  return d;
}

double rmse(const PredictionSeries& series) {
  series.validate();
  if (series.size() == 0) throw UsageError("rmse of an empty series");
  double sum = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double r = series.truth[i] - series.predicted[i];
    sum += r * r;
  }
  return std::sqrt(sum / static_cast<double>(series.size()));
}

double mce(const PredictionSeries& series) {
  series.validate();
  double weighted = 0.0;
  std::size_t weight = 0;
  for (const auto& [begin, end] : series.episodes()) {
    const std::size_t n = end - begin;
    if (n < 2) continue;
    double sum = 0.0;
    for (std::size_t i = begin; i + 1 < end; ++i) {
      const double d = series.predicted[i + 1] - series.predicted[i];
      sum += d * d;
    }
    weighted += static_cast<double>(n) * std::sqrt(sum / static_cast<double>(n - 1));
    weight += n;
  }
  if (weight == 0) throw UsageError("mce needs at least one episode with two or more frames");
  return weighted / static_cast<double>(weight);
}

OfflineFailures offline_failures(const PredictionSeries& series, std::size_t window, double threshold_deg) {
  series.validate();
  if (window == 0) throw ConfigError("failure window must be positive");
  OfflineFailures out;
  for (const auto& [begin, end] : series.episodes()) {
    std::size_t run = 0;
    for (std::size_t i = begin; i < end; ++i) {
      if (std::fabs(series.truth[i] - series.predicted[i]) > threshold_deg) {
        if (++run == window) {
          ++out.count;
          run = 0;
        }
      } else {
        run = 0;
      }
    }
  }
  out.distance_m = series.distance_m();
  out.per_10km = out.distance_m > 0.0 ? static_cast<double>(out.count) / (out.distance_m / 10000.0) : 0.0;
  return out;
}

}  // namespace atn
