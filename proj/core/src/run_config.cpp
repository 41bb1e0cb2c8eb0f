#include "atn/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace atn {
namespace {

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

std::vector<std::size_t> size_list(const RunConfig& c, const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& s : c.list(key)) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ConfigError(fmt::format("{}: '{}' is not a count", key, s));
    out.push_back(v);
  }
  return out;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"seed", "1", "root seed; every random stream is derived from it"},
      // Paths
      {"data.dir", "out/data", "dataset directory (raw/ and augmented/)"},
      {"pretrain.dir", "out/pretrain", "segmentation and pretext checkpoints"},
      {"train.dir", "out/train", "policy checkpoints and loss curve"},
      {"eval.dir", "out/eval", "offline metrics"},
      {"rollout.dir", "out/rollout", "closed-loop episode logs"},
      {"ablate.dir", "out/ablate", "ablation runs and report"},
      // Demonstrations
      {"data.episodes", "60", "expert episodes"},
      {"data.theme", "desert", "theme of the demonstration tracks"},
      {"data.track_length", "2500", "m"},
      {"demo.sim_hz", "10", ""},
      {"demo.record_hz", "2", ""},
      {"demo.episode_seconds", "120", ""},
      {"demo.speed_min", "12", "m/s"},
      {"demo.speed_max", "18", "m/s"},
      {"demo.noise_std_deg", "2.5", "steering perturbation while recording"},
      {"demo.noise_tau", "1", "s"},
      {"camera.height", "64", ""},
      {"camera.width", "64", ""},
      {"generate.augment", "true", "also write the augmented dataset"},
      // Augmentation
      {"augment.crop_top", "0.25", ""},
      {"augment.crop_bottom", "0.125", ""},
      {"augment.brightness_min", "0.3", ""},
      {"augment.brightness_max", "1.7", ""},
      {"augment.literal_brightness_range", "false", "draw brightness from (0, 10]"},
      {"augment.flip", "true", ""},
      {"augment.upsample", "true", ""},
      {"prepare.pad_top", "4", "zero rows above the crop"},
      {"prepare.pad_bottom", "4", "zero rows below the crop"},
      // Auxiliary vision
      {"flow.alpha", "10", ""},
      {"flow.iterations", "100", ""},
      {"flow.levels", "3", ""},
      {"seg.frames_per_theme", "400", "segmentation training frames per theme"},
      {"seg.epochs", "12", ""},
      {"seg.batch_size", "16", ""},
      {"seg.learning_rate", "0.003", ""},
      {"seg.ground_truth", "false", "feed ground-truth labels instead of predictions (offline only)"},
      // Pretext
      {"pretext.train_frames", "2700", ""},
      {"pretext.val_frames", "540", ""},
      {"pretext.epochs", "6", ""},
      {"pretext.batch_size", "32", ""},
      {"pretext.learning_rate", "0.001", ""},
      {"pretext.tracks_per_theme", "3", ""},
      {"pretext.track_length", "1500", "m"},
      // Model
      {"model.variant", "atn_base", "baseline|no_seg|no_lstm|no_flow|no_kin|atn_base|atn_transfer"},
      {"model.window", "3", "LSTM window"},
      {"model.seg_one_hot", "false", ""},
      {"model.conv_depths", "24,36,48,64,64", ""},
      {"model.kernel_sizes", "5,5,5,3,3", ""},
      {"model.strides", "2,2,2,1,1", ""},
      {"model.paddings", "0,0,0,1,1", ""},
      {"model.lstm_width", "128", ""},
      {"model.fc_widths", "256,128,64", ""},
      {"model.conv_dropout", "0.2", ""},
      {"model.fc_dropout", "0.5", ""},
      {"model.max_flow", "8", "px"},
      {"model.pretext_checkpoint", "", "defaults to <pretrain.dir>/pretext.ckpt"},
      // Training
      {"train.epochs", "10", ""},
      {"train.batch_size", "32", ""},
      {"train.samples_per_epoch", "0", "0 = the whole augmented plan"},
      {"train.eval_limit", "2000", "training records scored per epoch"},
      {"train.learning_rate", "0.001", ""},
      {"train.plateau_patience", "3", "epochs"},
      {"train.min_delta", "0.001", "degrees^2"},
      {"train.val_fraction", "0.15", "of episodes"},
      {"train.test_fraction", "0.15", "of episodes"},
      {"train.resume", "false", ""},
      // Evaluation
      {"eval.checkpoint", "", "defaults to <train.dir>/best.ckpt"},
      {"eval.split", "test", "train|val|test|all"},
      {"eval.failure_window", "10", "frames"},
      {"eval.failure_threshold_deg", "5", ""},
      // Rollout
      {"rollout.distance_km", "10", ""},
      {"rollout.themes", "desert,suburb,mountain", ""},
      {"rollout.cruise_speed", "15", "m/s"},
      {"rollout.control_hz", "10", ""},
      {"rollout.frame_stride", "5", "control steps between window frames"},
      // Ablation
      {"ablate.variants", "baseline,no_seg,no_lstm,no_flow,no_kin,atn_base,atn_transfer", ""},
      {"ablate.seeds", "1,2,3", ""},
      {"ablate.rollout_km", "2", "per theme and run"},
      {"ablate.epoch_threshold_deg", "2", "validation RMSE for the epochs-to-reach column"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_.emplace(k.name, k.default_value);
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  RunConfig c;
  c.merge_file(path);
  return c;
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected key = value", path.string(), n));
    try {
      set(trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", path.string(), n, e.what()));
    }
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  const std::string old = it->second;
  it->second = value;
  // Type check against the default's shape.
  const auto& keys = config_keys();
  const auto spec = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.name == key; });
  const std::string_view def = spec->default_value;
  try {
    if (def == "true" || def == "false") {
      flag(key);
    } else if (!def.empty() && def.find(',') == std::string_view::npos && def.find_first_not_of("0123456789.") == std::string_view::npos) {
      number(key);
    }
  } catch (...) {
    it->second = old;
    throw;
  }
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(std::string_view(assignment).substr(0, eq)), trim(std::string_view(assignment).substr(eq + 1)));
}

const std::string& RunConfig::text(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::number(const std::string& key) const {
  const std::string& s = text(key);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError(fmt::format("{}: '{}' is not a finite number", key, s));
  }
  return v;
}

std::uint64_t RunConfig::integer(const std::string& key) const {
  const std::string& s = text(key);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError(fmt::format("{}: '{}' is not a non-negative integer", key, s));
  }
  return v;
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& s = text(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, s));
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream in(text(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& [k, v] : values_) out += fmt::format("{} = {}\n", k, v);
  return out;
}

void RunConfig::write_resolved(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << resolved();
}

DemoConfig demo_config(const RunConfig& c) {
  DemoConfig d;
  d.sim_hz = c.number("demo.sim_hz");
  d.record_hz = c.number("demo.record_hz");
  d.episode_seconds = c.number("demo.episode_seconds");
  d.speed_min = c.number("demo.speed_min");
  d.speed_max = c.number("demo.speed_max");
  d.noise_std_deg = c.number("demo.noise_std_deg");
  d.noise_tau = c.number("demo.noise_tau");
  d.render.camera.height = c.integer("camera.height");
  d.render.camera.width = c.integer("camera.width");
  if (!(d.speed_min > 0.0 && d.speed_max >= d.speed_min)) throw ConfigError("demo speeds must satisfy 0 < min <= max");
  if (!(d.record_hz > 0.0 && d.record_hz <= d.sim_hz)) throw ConfigError("demo.record_hz must be in (0, demo.sim_hz]");
  return d;
}

AugmentConfig augment_config(const RunConfig& c) {
  AugmentConfig a;
  a.crop_top = c.number("augment.crop_top");
  a.crop_bottom = c.number("augment.crop_bottom");
  a.brightness_min = c.number("augment.brightness_min");
  a.brightness_max = c.number("augment.brightness_max");
  a.literal_brightness_range = c.flag("augment.literal_brightness_range");
  a.flip = c.flag("augment.flip");
  a.upsample = c.flag("augment.upsample");
  a.target_hz = c.number("demo.record_hz");
  a.validate();
  return a;
}

FlowConfig flow_config(const RunConfig& c) {
  FlowConfig f;
  f.alpha = c.number("flow.alpha");
  f.iterations = static_cast<int>(c.integer("flow.iterations"));
  f.levels = static_cast<int>(c.integer("flow.levels"));
  f.validate();
  return f;
}

PrepareConfig prepare_config(const RunConfig& c) {
  PrepareConfig p;
  p.augment = augment_config(c);
  p.flow = flow_config(c);
  p.pad_top = c.integer("prepare.pad_top");
  p.pad_bottom = c.integer("prepare.pad_bottom");
  return p;
}

AtnConfig model_config(const RunConfig& c) {
  AtnConfig m = AtnConfig::variant(c.text("model.variant"));
  m.window = c.integer("model.window");
  m.seg_one_hot = c.flag("model.seg_one_hot");
  m.conv_depths = size_list(c, "model.conv_depths");
  m.kernel_sizes = size_list(c, "model.kernel_sizes");
  m.strides = size_list(c, "model.strides");
  m.paddings = size_list(c, "model.paddings");
  m.lstm_width = c.integer("model.lstm_width");
  m.fc_widths = size_list(c, "model.fc_widths");
  m.conv_dropout = c.number("model.conv_dropout");
  m.fc_dropout = c.number("model.fc_dropout");
  m.max_flow = c.number("model.max_flow");
  const auto camera_h = static_cast<double>(c.integer("camera.height"));
  const auto crop_rows = static_cast<std::size_t>(
      std::floor(camera_h * (1.0 - c.number("augment.crop_top") - c.number("augment.crop_bottom"))));
  m.input_height = crop_rows + c.integer("prepare.pad_top") + c.integer("prepare.pad_bottom");
  m.input_width = c.integer("camera.width");
  m.validate();
  return m;
}

SegTrainConfig seg_train_config(const RunConfig& c) {
  SegTrainConfig s;
  s.epochs = static_cast<int>(c.integer("seg.epochs"));
  s.batch_size = c.integer("seg.batch_size");
  s.learning_rate = c.number("seg.learning_rate");
  s.seed = derive_seed(c.seed(), "segnet");
  return s;
}

PretextConfig pretext_config(const RunConfig& c) {
  PretextConfig p;
  p.train_frames = c.integer("pretext.train_frames");
  p.val_frames = c.integer("pretext.val_frames");
  p.epochs = c.integer("pretext.epochs");
  p.batch_size = c.integer("pretext.batch_size");
  p.learning_rate = c.number("pretext.learning_rate");
  p.tracks_per_theme = c.integer("pretext.tracks_per_theme");
  p.track_length = c.number("pretext.track_length");
  p.seed = derive_seed(c.seed(), "pretext");
  return p;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.epochs = c.integer("train.epochs");
  t.batch_size = c.integer("train.batch_size");
  t.samples_per_epoch = c.integer("train.samples_per_epoch");
  t.train_eval_limit = c.integer("train.eval_limit");
  t.optimizer.learning_rate = c.number("train.learning_rate");
  t.optimizer.plateau_patience = static_cast<int>(c.integer("train.plateau_patience"));
  t.optimizer.min_delta = c.number("train.min_delta");
  t.augment = augment_config(c);
  t.seed = derive_seed(c.seed(), "train");
  t.out_dir = c.path("train.dir");
  t.resume = c.flag("train.resume");
  t.validate();
  return t;
}

RolloutConfig rollout_config(const RunConfig& c) {
  RolloutConfig r;
  r.distance_km = c.number("rollout.distance_km");
  r.cruise_speed = c.number("rollout.cruise_speed");
  const double hz = c.number("rollout.control_hz");
  if (!(hz > 0.0)) throw ConfigError("rollout.control_hz must be positive");
  r.control_dt = 1.0 / hz;
  r.render.camera.height = c.integer("camera.height");
  r.render.camera.width = c.integer("camera.width");
  r.seed = derive_seed(c.seed(), "rollout");
  if (!(r.distance_km > 0.0)) throw ConfigError("rollout.distance_km must be positive");
  return r;
}

AblationConfig ablation_config(const RunConfig& c) {
  AblationConfig a;
  a.variants = c.list("ablate.variants");
  for (const auto& v : a.variants) AtnConfig::variant(v);
  for (const auto& s : c.list("ablate.seeds")) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ConfigError("ablate.seeds: '" + s + "' is not a seed");
    a.seeds.push_back(v);
  }
  a.train = train_config(c);
  a.train.out_dir.clear();
  a.train.resume = false;
  a.overrides = model_config(c);
  a.epoch_threshold_deg = c.number("ablate.epoch_threshold_deg");
  a.rollout = rollout_config(c);
  a.rollout.distance_km = c.number("ablate.rollout_km");
  a.frame_stride = c.integer("rollout.frame_stride");
  a.train_eval_limit = c.integer("train.eval_limit");
  a.out_dir = c.path("ablate.dir");
  return a;
}

std::vector<Theme> rollout_themes(const RunConfig& c) {
  std::vector<Theme> out;
  for (const auto& t : c.list("rollout.themes")) out.push_back(parse_theme(t));
  if (out.empty()) throw ConfigError("rollout.themes is empty");
  return out;
}

}  // namespace atn
