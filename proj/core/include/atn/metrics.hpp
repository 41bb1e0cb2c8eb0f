#pragma once

#include <cstddef>
#include <vector>

namespace atn {

// Ground truth and predicted steering per frame, grouped into episodes.
struct PredictionSeries {
  std::vector<double> truth;      // degrees
  std::vector<double> predicted;  // degrees
  // First frame of every episode; empty means one episode.
  std::vector<std::size_t> episode_starts;
  // Optional per-frame speed (m/s) and frame spacing, for distance.
  std::vector<double> speed_mps;
  double frame_dt = 0.5;

  std::size_t size() const { return truth.size(); }
  void validate() const;
  // [begin, end) ranges of every episode.
  std::vector<std::pair<std::size_t, std::size_t>> episodes() const;
  // Sum of speed * frame_dt.
  double distance_m() const;
};

// sqrt(mean((truth - predicted)^2)).
double rmse(const PredictionSeries& series);

// Per episode sqrt(sum((p[i+1] - p[i])^2) / (n - 1)) over predictions,
// averaged across episodes weighted by episode length. Episodes shorter than
// two frames are skipped.
double mce(const PredictionSeries& series);

struct OfflineFailures {
  std::size_t count = 0;
  double distance_m = 0.0;
  double per_10km = 0.0;
};

// A failure is `window` consecutive frames deviating by more than
// threshold_deg; the scan restarts after each event, so events never overlap.
OfflineFailures offline_failures(const PredictionSeries& series, std::size_t window = 10,
                                 double threshold_deg = 5.0);

}  // namespace atn
