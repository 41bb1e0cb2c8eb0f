#include "atn/training.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace atn {
namespace {

double parse_number(const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) throw FormatError("bad number in checkpoint state: " + text);
  return v;
}

std::string history_line(const EpochStats& s) {
  return fmt::format("{} {} {} {} {} {}", s.epoch, s.train_loss, s.train_rmse, s.val_loss, s.val_rmse, s.learning_rate);
}

EpochStats parse_history(const std::string& line) {
  std::istringstream in(line);
  std::string f[6];
  for (auto& x : f) in >> x;
  if (!in) throw FormatError("malformed history entry in checkpoint: " + line);
  EpochStats s;
  s.epoch = static_cast<std::size_t>(parse_number(f[0]));
  s.train_loss = parse_number(f[1]);
  s.train_rmse = parse_number(f[2]);
  s.val_loss = parse_number(f[3]);
  s.val_rmse = parse_number(f[4]);
  s.learning_rate = parse_number(f[5]);
  return s;
}

Checkpoint resume_checkpoint(AtnModel& model, const TrainResult& result, const PlateauScheduler& scheduler,
                             const TrainConfig& config) {
  Checkpoint c = model.to_checkpoint(true);
  c.state.emplace_back("epoch", std::to_string(result.history.size()));
  c.state.emplace_back("learning_rate", fmt::format("{}", scheduler.learning_rate()));
  c.state.emplace_back("scheduler_best", fmt::format("{}", scheduler.best()));
  c.state.emplace_back("scheduler_stale", std::to_string(scheduler.epochs_since_improvement()));
  c.state.emplace_back("best_epoch", std::to_string(result.best_epoch));
  c.state.emplace_back("best_val_loss", fmt::format("{}", result.best_val_loss));
  c.state.emplace_back("train_seed", std::to_string(config.seed));
  for (std::size_t i = 0; i < result.history.size(); ++i) {
    c.state.emplace_back(fmt::format("history.{}", i), history_line(result.history[i]));
  }
  return c;
}

std::vector<std::size_t> strided_subset(const std::vector<std::size_t>& records, std::size_t limit) {
  if (limit == 0 || records.size() <= limit) return records;
  // Whole contiguous blocks keep episode structure for the series.
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

SegmentationMap crop_truth(const SegmentationMap& full, const PrepareConfig& prepare, std::size_t rows) {
  const auto top = static_cast<std::size_t>(std::floor(static_cast<double>(full.height) * prepare.augment.crop_top));
  SegmentationMap out(rows, full.width);
  std::copy_n(full.classes.data() + top * full.width, rows * full.width, out.classes.data());
  return out;
}

int argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t k = logits.dim(1);
  const float* p = logits.data() + row * k;
  return static_cast<int>(std::max_element(p, p + k) - p);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (batch normalization)");
  optimizer.validate();
  augment.validate();
}

TrainResult train_policy(AtnModel& model, const PreparedData& data, const Split& split, const TrainConfig& config) {
  config.validate();
  if (split.train.empty()) throw UsageError("training split is empty");
  if (split.val.empty()) throw UsageError("validation split is empty");
  ParamRefs<float> params = model.parameters();
  PlateauScheduler scheduler(config.optimizer);
  TrainResult result;
  Checkpoint best = model.to_checkpoint(false);

  const bool files = !config.out_dir.empty();
  if (files) std::filesystem::create_directories(config.out_dir);
  if (config.resume) {
    const auto last = config.out_dir / "last.ckpt";
    if (!files || !std::filesystem::exists(last)) {
      throw UsageError("cannot resume: no checkpoint at " + last.string());
    }
    const Checkpoint c = read_checkpoint(last);
    model.load(c, true);
    const auto epochs = static_cast<std::size_t>(parse_number(c.state_value("epoch")));
    for (std::size_t i = 0; i < epochs; ++i) result.history.push_back(parse_history(c.state_value(fmt::format("history.{}", i))));
    scheduler.restore(parse_number(c.state_value("learning_rate")), parse_number(c.state_value("scheduler_best")),
                      static_cast<int>(parse_number(c.state_value("scheduler_stale"))));
    result.best_epoch = static_cast<std::size_t>(parse_number(c.state_value("best_epoch")));
    result.best_val_loss = parse_number(c.state_value("best_val_loss"));
    const auto best_path = config.out_dir / "best.ckpt";
    if (std::filesystem::exists(best_path)) best = read_checkpoint(best_path);
    spdlog::info("resuming at epoch {} (learning rate {})", epochs + 1, scheduler.learning_rate());
  }
  Checkpoint last_good = resume_checkpoint(model, result, scheduler, config);

  auto fail = [&](const std::string& why) {
    if (files) write_checkpoint(last_good, config.out_dir / "last_good.ckpt");
    throw NumericError(why + (files ? "; last good state written to " + (config.out_dir / "last_good.ckpt").string() : ""));
  };

  const std::vector<std::size_t> train_eval = strided_subset(split.train, config.train_eval_limit);
  Tensor frames, kin, grad;
  std::vector<float> targets;
  for (std::size_t epoch = result.history.size() + 1; epoch <= config.epochs; ++epoch) {
    const double lr = scheduler.learning_rate();
    model.reseed_dropout(derive_seed(config.seed, fmt::format("dropout.epoch.{}", epoch)));
    std::vector<Provenance> plan = build_augmentation_plan(data.steering, split.train, config.augment,
                                                           derive_seed(config.seed, fmt::format("plan.epoch.{}", epoch)));
    if (config.samples_per_epoch > 0 && plan.size() > config.samples_per_epoch) plan.resize(config.samples_per_epoch);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < plan.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, plan.size() - start);
      if (n < 2) break;
      assemble_batch(data, model.config(), std::span<const Provenance>(plan.data() + start, n), frames, kin, targets);
      zero_grads<float>(params);
      const Tensor pred = model.forward(frames, kin, Mode::Train);
      const double loss = mse_loss(pred, std::span<const float>(targets), &grad);
      if (!std::isfinite(loss)) fail(fmt::format("training loss became non-finite in epoch {}", epoch));
      model.backward(grad);
      try {
        adam_step<float>(params, config.optimizer, lr);
      } catch (const NumericError& e) {
        fail(fmt::format("epoch {}: {}", epoch, e.what()));
      }
      loss_sum += loss * static_cast<double>(n);
      loss_count += n;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.learning_rate = lr;
    stats.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, loss_count));
    stats.train_rmse = rmse(predict_series(model, data, train_eval));
    stats.val_rmse = rmse(predict_series(model, data, split.val));
    stats.val_loss = stats.val_rmse * stats.val_rmse;
    if (!std::isfinite(stats.val_loss)) fail(fmt::format("validation loss is non-finite after epoch {}", epoch));
    result.history.push_back(stats);
    if (stats.val_loss < result.best_val_loss) {
      result.best_val_loss = stats.val_loss;
      result.best_epoch = epoch;
      best = model.to_checkpoint(false);
      if (files) write_checkpoint(best, config.out_dir / "best.ckpt");
    }
    scheduler.observe(stats.val_loss);
    last_good = resume_checkpoint(model, result, scheduler, config);
    if (files) {
      write_checkpoint(last_good, config.out_dir / "last.ckpt");
      write_loss_csv(result.history, config.out_dir / "loss.csv");
    }
    spdlog::info("epoch {:>3}  train loss {:8.4f}  train rmse {:7.4f}  val rmse {:7.4f}  lr {:.6g}", epoch,
                 stats.train_loss, stats.train_rmse, stats.val_rmse, lr);
  }
  model.load(best, false);
  return result;
}

void write_loss_csv(const std::vector<EpochStats>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "epoch,train_loss,train_rmse,val_loss,val_rmse,learning_rate\n";
  for (const auto& s : history) {
    out << fmt::format("{},{},{},{},{},{}\n", s.epoch, s.train_loss, s.train_rmse, s.val_loss, s.val_rmse, s.learning_rate);
  }
}

std::size_t epochs_to_reach(const std::vector<EpochStats>& history, double threshold) {
  for (const auto& s : history) {
    if (s.val_rmse <= threshold) return s.epoch;
  }
  return 0;
}

std::vector<PretextSample> make_pretext_samples(const AtnConfig& config, const SegNet* segnet,
                                                const PrepareConfig& prepare, const PretextConfig& pretext,
                                                std::size_t count, std::uint64_t track_seed) {
  config.validate();
  if (config.enable_segmentation && !segnet) spdlog::debug("pretext samples use ground-truth segmentation");
  std::vector<TrackSpec> tracks;
  for (Theme theme : kAllThemes) {
    for (std::size_t k = 0; k < pretext.tracks_per_theme; ++k) {
      tracks.push_back(generate_track(derive_seed(track_seed, fmt::format("pretext.track.{}.{}", theme_name(theme), k)),
                                      theme, pretext.track_length));
    }
  }
  Rng rng(derive_seed(track_seed, "pretext.samples"));
  const std::size_t cap = (count + 8) / 9;
  std::array<std::size_t, 9> counts{};
  std::vector<PretextSample> out;
  const std::size_t frame_size = config.input_channels() * config.input_height * config.input_width;
  const std::size_t max_attempts = 400 * count + 1000;
  RenderOptions render;
  for (std::size_t attempt = 0; out.size() < count; ++attempt) {
    if (attempt >= max_attempts) {
      throw ConfigError(fmt::format("could only draw {} of {} balanced pretext samples", out.size(), count));
    }
    const TrackSpec& track = tracks[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(tracks.size()))];
    const double kmax = theme_profile(track.theme).curvature_max;
    const double s = uniform(rng, 30.0, track.length() - 200.0);
    double mean = 0.0;
    for (int k = 0; k <= 30; ++k) mean += track.pose_at(s + 5.0 + k).curvature / 31.0;
    int dir;
    if (std::fabs(mean) < 0.2 * kmax) dir = 1;
    else if (mean > 0.5 * kmax) dir = 2;
    else if (mean < -0.5 * kmax) dir = 0;
    else continue;
    const int label = static_cast<int>(track.theme) * 3 + dir;
    if (counts[static_cast<std::size_t>(label)] >= cap) continue;
    ++counts[static_cast<std::size_t>(label)];

    const double offset = uniform(rng, -0.6, 0.6);
    const double yaw = uniform(rng, -2.0, 2.0) * std::acos(-1.0) / 180.0;
    auto pose_state = [&](double at) {
      const TrackPose p = track.pose_at(at);
      VehicleState st;
      st.x = p.x - offset * std::sin(p.heading);
      st.y = p.y + offset * std::cos(p.heading);
      st.heading = p.heading + yaw;
      st.speed = 15.0;
      return st;
    };
    render.noise_seed = rng();
    const RenderedFrame prev = render_frame(track, pose_state(s - 7.5), render, s - 7.5);
    render.noise_seed = rng();
    const RenderedFrame cur = render_frame(track, pose_state(s), render, s);
    const Image prev_crop = crop(prev.rgb, prepare.augment.crop_top, prepare.augment.crop_bottom);
    const Image cur_crop = crop(cur.rgb, prepare.augment.crop_top, prepare.augment.crop_bottom);
    SegmentationMap seg;
    if (config.enable_segmentation) {
      seg = segnet ? infer_segmentation(*segnet, cur_crop) : crop_truth(cur.seg, prepare, cur_crop.height);
    }
    FlowField flow;
    if (config.enable_flow) flow = compute_flow(prev_crop, cur_crop, prepare.flow);
    PretextSample sample;
    sample.label = label;
    sample.input.resize(frame_size);
    assemble_frame(cur_crop, &seg, &flow, config, prepare.pad_top, sample.input.data());
    out.push_back(std::move(sample));
  }
  return out;
}

PretextResult pretext_pretrain(const AtnConfig& config, const SegNet* segnet, const PrepareConfig& prepare,
                               const PretextConfig& pretext) {
  const auto train = make_pretext_samples(config, segnet, prepare, pretext, pretext.train_frames,
                                          derive_seed(pretext.seed, "pretext.train"));
  const auto val = make_pretext_samples(config, segnet, prepare, pretext, pretext.val_frames,
                                        derive_seed(pretext.seed, "pretext.val"));
  Backbone backbone(config, derive_seed(pretext.seed, "pretext.backbone"));
  Linear<float> classifier("pretext.classifier", backbone.feature_size(), 9);
  Rng rng(derive_seed(pretext.seed, "pretext.classifier"));
  classifier.init(rng, 1.0);
  ParamRefs<float> params;
  backbone.collect(params);
  classifier.collect(params);
  OptimizerConfig opt;
  opt.learning_rate = pretext.learning_rate;

  const std::size_t frame_size = config.input_channels() * config.input_height * config.input_width;
  auto batch = [&](const std::vector<PretextSample>& set, std::span<const std::size_t> idx, Tensor& x,
                   std::vector<std::uint8_t>& labels) {
    x = Tensor({idx.size(), config.input_channels(), config.input_height, config.input_width});
    labels.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(set[idx[i]].input.data(), frame_size, x.data() + i * frame_size);
      labels[i] = static_cast<std::uint8_t>(set[idx[i]].label);
    }
  };
  auto accuracy = [&](const std::vector<PretextSample>& set) {
    std::size_t hit = 0;
    std::vector<std::size_t> idx;
    Tensor x;
    std::vector<std::uint8_t> labels;
    for (std::size_t start = 0; start < set.size(); start += 64) {
      idx.resize(std::min<std::size_t>(64, set.size() - start));
      std::iota(idx.begin(), idx.end(), start);
      batch(set, idx, x, labels);
      const Tensor logits = classifier.infer(backbone.infer(x));
      for (std::size_t i = 0; i < idx.size(); ++i) hit += argmax_row(logits, i) == labels[i];
    }
    return set.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(set.size());
  };

  PretextResult result;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng order_rng(derive_seed(pretext.seed, "pretext.order"));
  Tensor x, grad;
  std::vector<std::uint8_t> labels;
  for (std::size_t epoch = 1; epoch <= pretext.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[std::min(static_cast<std::size_t>(uniform01(order_rng) * static_cast<double>(i)), i - 1)]);
    }
    backbone.reseed_dropout(derive_seed(pretext.seed, fmt::format("pretext.dropout.{}", epoch)));
    double total = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start + 1 < order.size(); start += pretext.batch_size) {
      const std::size_t n = std::min(pretext.batch_size, order.size() - start);
      if (n < 2) break;
      batch(train, std::span<const std::size_t>(order.data() + start, n), x, labels);
      zero_grads<float>(params);
      const Tensor logits = classifier.forward(backbone.forward(x, Mode::Train));
      total += softmax_cross_entropy(logits, std::span<const std::uint8_t>(labels), &grad) * static_cast<double>(n);
      seen += n;
      backbone.backward(classifier.backward(grad));
      adam_step<float>(params, opt, pretext.learning_rate);
    }
    result.epoch_loss.push_back(total / static_cast<double>(std::max<std::size_t>(1, seen)));
    spdlog::info("pretext epoch {:>2}  loss {:.4f}", epoch, result.epoch_loss.back());
  }
  result.train_accuracy = accuracy(train);
  result.val_accuracy = accuracy(val);
  result.checkpoint.kind = "pretext";
  result.checkpoint.seed = pretext.seed;
  result.checkpoint.config = config.to_kv();
  ParamRefs<float> backbone_params;
  BufferRefs<float> buffers;
  backbone.collect(backbone_params);
  backbone.collect_buffers(buffers);
  store_parameters(result.checkpoint, backbone_params, buffers, false);
  return result;
}

ModelSteering::ModelSteering(const AtnModel& model, const SegNet* segnet, PrepareConfig prepare, std::size_t frame_stride)
    : model_(model), segnet_(segnet), prepare_(std::move(prepare)), stride_(frame_stride) {
  if (stride_ == 0) throw ConfigError("frame stride must be positive");
  if (model_.config().enable_segmentation && !segnet_) {
    throw UsageError("this model consumes segmentation but no segmentation network was given");
  }
}

void ModelSteering::reset() {
  crops_.clear();
  contexts_.clear();
}

double ModelSteering::act(const Observation& obs) {
  const AtnConfig& cfg = model_.config();
  Image cur = crop(obs.rgb, prepare_.augment.crop_top, prepare_.augment.crop_bottom);
  SegmentationMap seg;
  if (cfg.enable_segmentation) seg = infer_segmentation(*segnet_, cur);
  FlowField flow(cur.height, cur.width);
  if (cfg.enable_flow && crops_.size() == stride_) flow = compute_flow(crops_.front(), cur, prepare_.flow);
  if (cfg.enable_flow) {
    crops_.push_back(cur);
    if (crops_.size() > stride_) crops_.pop_front();
  }

  Tensor frame({1, cfg.input_channels(), cfg.input_height, cfg.input_width});
  assemble_frame(cur, &seg, &flow, cfg, prepare_.pad_top, frame.data());
  Tensor kin({1, KinematicsVector::kSize});
  const auto norm = normalize(obs.kinematics);
  std::copy(norm.begin(), norm.end(), kin.data());
  contexts_.push_back(model_.context(frame, kin));
  const std::size_t w = cfg.effective_window();
  const std::size_t keep = (w - 1) * stride_ + 1;
  while (contexts_.size() > keep) contexts_.pop_front();

  const std::size_t d = model_.context_width();
  Tensor window({w, 1, d});
  for (std::size_t k = 0; k < w; ++k) {
    const std::size_t back = (w - 1 - k) * stride_;
    const std::size_t idx = contexts_.size() - 1 >= back ? contexts_.size() - 1 - back : 0;
    std::copy_n(contexts_[idx].data(), d, window.data() + k * d);
  }
  return model_.head(window)[0];
}

}  // namespace atn
