#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "atn/ablation.hpp"
#include "atn/augment.hpp"
#include "atn/model.hpp"
#include "atn/pipeline.hpp"
#include "atn/sim.hpp"
#include "atn/training.hpp"
#include "atn/vision.hpp"

namespace atn {

struct ConfigKey {
  std::string_view name;
  std::string_view default_value;
  std::string_view help;
};

// Every recognised key with its default.
const std::vector<ConfigKey>& config_keys();

// Flat "key = value" settings. Unknown keys and unparsable values are
// ConfigErrors; '#' starts a comment.
class RunConfig {
 public:
  RunConfig();

  static RunConfig from_file(const std::filesystem::path& path);
  void merge_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  // "key=value" as given on the command line.
  void set_assignment(const std::string& assignment);

  const std::string& text(const std::string& key) const;
  double number(const std::string& key) const;
  std::uint64_t integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;
  std::filesystem::path path(const std::string& key) const { return text(key); }

  // Sorted "key = value" lines; parsing it back gives an equal config.
  std::string resolved() const;
  void write_resolved(const std::filesystem::path& path) const;

  std::uint64_t seed() const { return integer("seed"); }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

 private:
  std::map<std::string, std::string> values_;
};

// Module settings assembled from a RunConfig.
DemoConfig demo_config(const RunConfig& c);
AugmentConfig augment_config(const RunConfig& c);
FlowConfig flow_config(const RunConfig& c);
PrepareConfig prepare_config(const RunConfig& c);
AtnConfig model_config(const RunConfig& c);
SegTrainConfig seg_train_config(const RunConfig& c);
PretextConfig pretext_config(const RunConfig& c);
TrainConfig train_config(const RunConfig& c);
RolloutConfig rollout_config(const RunConfig& c);
AblationConfig ablation_config(const RunConfig& c);
std::vector<Theme> rollout_themes(const RunConfig& c);

}  // namespace atn
