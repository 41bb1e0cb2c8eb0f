#include "atn/ablation.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace atn {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::size_t> strided(const std::vector<std::size_t>& records, std::size_t limit) {
  if (limit == 0 || records.size() <= limit) return records;
  std::vector<std::size_t> out;
  const std::size_t block = 20;
  const std::size_t blocks = (limit + block - 1) / block;
  const double step = static_cast<double>(records.size()) / static_cast<double>(blocks);
  for (std::size_t b = 0; b < blocks; ++b) {
    const auto start = static_cast<std::size_t>(static_cast<double>(b) * step);
    for (std::size_t i = start; i < std::min(records.size(), start + block); ++i) out.push_back(records[i]);
  }
  return out;
}

AblationRow failed_row(const std::string& variant, const std::string& seed, std::size_t themes) {
  AblationRow row;
  row.variant = variant;
  row.seed = seed;
  row.rmse_train = row.rmse_test = row.mce_train = row.mce_test = row.epochs_to_threshold = kNaN;
  row.fail_per_10km.assign(themes, kNaN);
  row.status = "failed";
  return row;
}

AblationRow mean_of(const std::string& variant, const std::vector<AblationRow>& runs, std::size_t themes) {
  AblationRow mean = failed_row(variant, "mean", themes);
  std::size_t n = 0;
  for (const auto& r : runs) n += r.ok();
  if (n == 0) return mean;
  mean.status = "ok";
  mean.rmse_train = mean.rmse_test = mean.mce_train = mean.mce_test = mean.epochs_to_threshold = 0.0;
  mean.fail_per_10km.assign(themes, 0.0);
  const double k = 1.0 / static_cast<double>(n);
  for (const auto& r : runs) {
    if (!r.ok()) continue;
    mean.rmse_train += k * r.rmse_train;
    mean.rmse_test += k * r.rmse_test;
    mean.mce_train += k * r.mce_train;
    mean.mce_test += k * r.mce_test;
    mean.epochs_to_threshold += k * r.epochs_to_threshold;
    for (std::size_t t = 0; t < themes; ++t) mean.fail_per_10km[t] += k * r.fail_per_10km[t];
  }
  return mean;
}

std::vector<std::string> header(const AblationReport& report) {
  std::vector<std::string> h{"variant", "seed", "rmse_train", "rmse_test", "mce_train", "mce_test"};
  for (const auto& t : report.themes) h.push_back("fail_per_10km_" + t);
  h.push_back("epochs_to_threshold");
  h.push_back("status");
  return h;
}

std::vector<double> numbers(const AblationRow& r) {
  std::vector<double> v{r.rmse_train, r.rmse_test, r.mce_train, r.mce_test};
  v.insert(v.end(), r.fail_per_10km.begin(), r.fail_per_10km.end());
  v.push_back(r.epochs_to_threshold);
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream in(line);
  std::string field;
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw FormatError(fmt::format("{}: '{}' is not a number", path.string(), s));
  }
  return v;
}

bool same_value(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

const AblationRow* AblationReport::mean_row(std::string_view variant) const {
  for (const auto& r : rows) {
    if (r.variant == variant && r.seed == "mean") return &r;
  }
  return nullptr;
}

bool same_report(const AblationReport& a, const AblationReport& b) {
  if (a.themes != b.themes || a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const auto& x = a.rows[i];
    const auto& y = b.rows[i];
    if (x.variant != y.variant || x.seed != y.seed || x.status != y.status) return false;
    const auto nx = numbers(x), ny = numbers(y);
    if (nx.size() != ny.size()) return false;
    for (std::size_t k = 0; k < nx.size(); ++k) {
      if (!same_value(nx[k], ny[k])) return false;
    }
  }
  return true;
}

AtnConfig ablation_variant(const AtnConfig& shared, std::string_view variant) {
  const AtnConfig v = AtnConfig::variant(variant);
  AtnConfig c = shared;
  c.enable_segmentation = v.enable_segmentation;
  c.enable_flow = v.enable_flow;
  c.enable_lstm = v.enable_lstm;
  c.enable_kinematics = v.enable_kinematics;
  c.backbone = v.backbone;
  return c;
}

AblationReport run_ablation(const PreparedData& data, const Split& split, const SegNet* segnet,
                            const PrepareConfig& prepare, const std::vector<TrackSpec>& eval_tracks,
                            const AblationConfig& config, const Checkpoint* pretext) {
  AblationReport report;
  for (const auto& t : eval_tracks) report.themes.emplace_back(theme_name(t.theme));
  for (const auto& v : config.variants) {
    const AtnConfig c = ablation_variant(config.overrides, v);
    c.validate();
    if (c.backbone == "pretext_transfer" && !pretext) {
      throw UsageError("variant " + v + " needs a pretext checkpoint");
    }
  }
  if (!config.variants.empty() && config.seeds.empty()) throw ConfigError("ablation needs at least one seed");
  const std::vector<std::size_t> train_eval = strided(split.train, config.train_eval_limit);

  for (const auto& variant : config.variants) {
    std::vector<AblationRow> runs;
    for (std::uint64_t seed : config.seeds) {
      const std::string seed_text = std::to_string(seed);
      const AtnConfig model_config = ablation_variant(config.overrides, variant);
      TrainConfig train = config.train;
      train.seed = derive_seed(seed, "ablation.train");
      train.resume = false;
      if (!config.out_dir.empty()) train.out_dir = config.out_dir / variant / ("seed_" + seed_text);
      spdlog::info("ablation: {} seed {}", variant, seed);
      try {
        AtnModel model(model_config, derive_seed(seed, "ablation.model"));
        if (model_config.backbone == "pretext_transfer") model.load_backbone(*pretext);
        const TrainResult result = train_policy(model, data, split, train);
        AblationRow row;
        row.variant = variant;
        row.seed = seed_text;
        const PredictionSeries on_train = predict_series(model, data, train_eval);
        const PredictionSeries on_test = predict_series(model, data, split.test);
        row.rmse_train = rmse(on_train);
        row.rmse_test = rmse(on_test);
        row.mce_train = mce(on_train);
        row.mce_test = mce(on_test);
        const std::size_t reached = epochs_to_reach(result.history, config.epoch_threshold_deg);
        row.epochs_to_threshold = static_cast<double>(reached == 0 ? train.epochs + 1 : reached);
        for (const auto& track : eval_tracks) {
          ModelSteering policy(model, model_config.enable_segmentation ? segnet : nullptr, prepare,
                               config.frame_stride);
          RolloutConfig rollout = config.rollout;
          rollout.seed = derive_seed(seed, fmt::format("ablation.rollout.{}", theme_name(track.theme)));
          const EpisodeLog log = closed_loop_rollout(policy, track, rollout);
          if (!config.out_dir.empty()) {
            write_episode_csv(log, train.out_dir / fmt::format("rollout_{}.csv", theme_name(track.theme)));
          }
          row.fail_per_10km.push_back(log.failures_per_10km());
        }
        runs.push_back(std::move(row));
      } catch (const NumericError& e) {
        spdlog::warn("ablation: {} seed {} failed: {}", variant, seed, e.what());
        runs.push_back(failed_row(variant, seed_text, eval_tracks.size()));
      }
    }
    report.rows.insert(report.rows.end(), runs.begin(), runs.end());
    report.rows.push_back(mean_of(variant, runs, eval_tracks.size()));
  }
  return report;
}

void emit_report(const AblationReport& report, const std::filesystem::path& stem) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  const auto csv_path = std::filesystem::path(stem.string() + ".csv");
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw FormatError("cannot write " + csv_path.string());
  csv << fmt::format("{}\n", fmt::join(header(report), ","));
  for (const auto& r : report.rows) {
    csv << r.variant << ',' << r.seed;
    for (double v : numbers(r)) csv << ',' << fmt::format("{}", v);
    csv << ',' << r.status << '\n';
  }
  const auto txt_path = std::filesystem::path(stem.string() + ".txt");
  std::ofstream txt(txt_path, std::ios::binary);
  if (!txt) throw FormatError("cannot write " + txt_path.string());
  txt << format_report_table(report);
}

std::string format_report_table(const AblationReport& report) {
  const auto h = header(report);
  std::vector<std::vector<std::string>> cells{h};
  for (const auto& r : report.rows) {
    std::vector<std::string> line{r.variant, r.seed};
    for (double v : numbers(r)) line.push_back(std::isnan(v) ? "-" : fmt::format("{:.2f}", v));
    line.push_back(r.status);
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> widths(h.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], line[c].size());
  }
  std::string out;
  for (const auto& line : cells) {
    std::string text;
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c > 0) text += "  ";
      // Names left-aligned, numbers right-aligned.
      text += c < 2 || c + 1 == line.size() ? fmt::format("{:<{}}", line[c], widths[c])
                                            : fmt::format("{:>{}}", line[c], widths[c]);
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    out += text + "\n";
  }
  return out;
}

AblationReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open report " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty report");
  const auto h = split_csv(line);
  const std::size_t fixed = 6;
  if (h.size() < fixed + 2 || h[0] != "variant" || h[1] != "seed" || h.back() != "status" ||
      h[h.size() - 2] != "epochs_to_threshold") {
    throw FormatError(path.string() + ": unexpected report header");
  }
  AblationReport report;
  const std::string prefix = "fail_per_10km_";
  for (std::size_t c = fixed; c + 2 < h.size(); ++c) {
    if (h[c].rfind(prefix, 0) != 0) throw FormatError(path.string() + ": unexpected column " + h[c]);
    report.themes.push_back(h[c].substr(prefix.size()));
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != h.size()) throw FormatError(fmt::format("{}: row has {} fields, expected {}", path.string(), f.size(), h.size()));
    AblationRow r;
    r.variant = f[0];
    r.seed = f[1];
    r.rmse_train = parse_double(f[2], path);
    r.rmse_test = parse_double(f[3], path);
    r.mce_train = parse_double(f[4], path);
    r.mce_test = parse_double(f[5], path);
    for (std::size_t t = 0; t < report.themes.size(); ++t) r.fail_per_10km.push_back(parse_double(f[fixed + t], path));
    r.epochs_to_threshold = parse_double(f[f.size() - 2], path);
    r.status = f.back();
    report.rows.push_back(std::move(r));
  }
  return report;
}

}  // namespace atn
