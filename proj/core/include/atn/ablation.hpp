#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "atn/pipeline.hpp"
#include "atn/sim.hpp"
#include "atn/training.hpp"

namespace atn {

struct AblationRow {
  std::string variant;
  std::string seed;  // decimal seed, or "mean" for the aggregate row
  double rmse_train = 0.0;
  double rmse_test = 0.0;
  double mce_train = 0.0;
  double mce_test = 0.0;
  std::vector<double> fail_per_10km;  // one per report theme
  // First epoch with validation RMSE at or below the threshold; epochs + 1
  // when it is never reached.
  double epochs_to_threshold = 0.0;
  std::string status = "ok";  // "ok" or "failed"

  bool ok() const { return status == "ok"; }
};

struct AblationReport {
  std::vector<std::string> themes;
  std::vector<AblationRow> rows;

  // The aggregate row of `variant`, if present.
  const AblationRow* mean_row(std::string_view variant) const;
};

// Equal when every field matches, NaN matching NaN.
bool same_report(const AblationReport& a, const AblationReport& b);

struct AblationConfig {
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  TrainConfig train;  // seed and out_dir are set per run
  AtnConfig overrides = AtnConfig::variant("atn_base");  // geometry and widths shared by all variants
  double epoch_threshold_deg = 2.0;
  RolloutConfig rollout;
  std::size_t frame_stride = 5;
  // Training records evaluated for the train columns (evenly strided); 0 = all.
  std::size_t train_eval_limit = 2000;
  std::filesystem::path out_dir;  // per-run training artifacts; empty = none
};

// Trains every variant under every seed on the same data and split. Each run
// is evaluated offline on the train and test records and closed loop on one
// track per theme. A run that hits a numeric error is reported as failed and
// the sweep continues. `pretext` is required when atn_transfer is requested.
AblationReport run_ablation(const PreparedData& data, const Split& split, const SegNet* segnet,
                            const PrepareConfig& prepare, const std::vector<TrackSpec>& eval_tracks,
                            const AblationConfig& config, const Checkpoint* pretext);

// Builds the variant's model config on top of the shared settings.
AtnConfig ablation_variant(const AtnConfig& shared, std::string_view variant);

// Writes <stem>.csv (shortest round-trip doubles) and <stem>.txt (aligned,
// two decimals).
void emit_report(const AblationReport& report, const std::filesystem::path& stem);
AblationReport read_report_csv(const std::filesystem::path& path);
std::string format_report_table(const AblationReport& report);

}  // namespace atn
