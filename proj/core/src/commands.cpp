#include "atn/commands.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace atn {
namespace {

std::uint64_t file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[static_cast<std::size_t>(i)]);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::filesystem::path raw_dir(const RunConfig& c) { return c.path("data.dir") / "raw"; }
std::filesystem::path segnet_path(const RunConfig& c) { return c.path("pretrain.dir") / "segnet.ckpt"; }

std::filesystem::path pretext_path(const RunConfig& c) {
  const std::string& p = c.text("model.pretext_checkpoint");
  return p.empty() ? c.path("pretrain.dir") / "pretext.ckpt" : std::filesystem::path(p);
}

std::filesystem::path checkpoint_path(const RunConfig& c) {
  const std::string& p = c.text("eval.checkpoint");
  return p.empty() ? c.path("train.dir") / "best.ckpt" : std::filesystem::path(p);
}

Dataset load_dataset(const RunConfig& c) {
  const auto dir = raw_dir(c);
  if (!std::filesystem::exists(dir / "manifest.txt")) {
    throw UsageError("no dataset at " + dir.string() + " (run generate first)");
  }
  return read_dataset(dir);
}

bool uses_predicted_seg(const RunConfig& c, const AtnConfig& model) {
  return model.enable_segmentation && !c.flag("seg.ground_truth");
}

std::unique_ptr<SegNet> maybe_segnet(const RunConfig& c, bool needed) {
  if (!needed) return nullptr;
  const auto path = segnet_path(c);
  if (!std::filesystem::exists(path)) {
    throw UsageError("no segmentation checkpoint at " + path.string() + " (run pretrain first)");
  }
  return std::make_unique<SegNet>(load_segnet(path));
}

AtnModel load_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw UsageError("no checkpoint at " + path.string());
  const Checkpoint c = read_checkpoint(path);
  if (c.kind != "atn") throw FormatError(path.string() + " is a '" + c.kind + "' checkpoint, not a policy");
  AtnModel model(AtnConfig::from_kv(c.config), c.seed);
  model.load(c, false);
  return model;
}

std::vector<std::size_t> split_records(const Split& split, const std::string& which, std::size_t total) {
  if (which == "train") return split.train;
  if (which == "val") return split.val;
  if (which == "test") return split.test;
  if (which == "all") {
    std::vector<std::size_t> all(total);
    for (std::size_t i = 0; i < total; ++i) all[i] = i;
    return all;
  }
  throw ConfigError("eval.split must be train, val, test or all (got '" + which + "')");
}

}  // namespace

std::vector<TrackSpec> demonstration_tracks(const RunConfig& c) {
  const Theme theme = parse_theme(c.text("data.theme"));
  const std::size_t n = c.integer("data.episodes");
  if (n == 0) throw ConfigError("data.episodes must be at least 1");
  std::vector<TrackSpec> tracks;
  for (std::size_t i = 0; i < n; ++i) {
    tracks.push_back(generate_track(derive_seed(c.seed(), fmt::format("demo.track.{}", i)), theme,
                                    c.number("data.track_length")));
  }
  return tracks;
}

Dataset generate_demonstrations(const RunConfig& c) {
  return collect_demonstrations(demonstration_tracks(c), demo_config(c), derive_seed(c.seed(), "demo"));
}

std::vector<TrackSpec> evaluation_tracks(const RunConfig& c, double distance_km) {
  std::vector<TrackSpec> tracks;
  for (Theme t : rollout_themes(c)) {
    tracks.push_back(generate_track(derive_seed(c.seed(), fmt::format("eval.track.{}", theme_name(t))), t,
                                    distance_km * 1000.0 + 600.0));
  }
  return tracks;
}

void segmentation_frames(const RunConfig& c, std::vector<Image>& images, std::vector<SegmentationMap>& labels) {
  DemoConfig demo = demo_config(c);
  demo.episode_seconds = 60.0;
  const std::size_t per_episode = static_cast<std::size_t>(demo.episode_seconds * demo.record_hz);
  const std::size_t per_theme = c.integer("seg.frames_per_theme");
  const std::size_t episodes = (per_theme + per_episode - 1) / per_episode;
  const AugmentConfig aug = augment_config(c);
  for (Theme theme : kAllThemes) {
    std::vector<TrackSpec> tracks;
    for (std::size_t e = 0; e < episodes; ++e) {
      tracks.push_back(generate_track(derive_seed(c.seed(), fmt::format("seg.track.{}.{}", theme_name(theme), e)), theme,
                                      1500.0));
    }
    const Dataset d = collect_demonstrations(tracks, demo, derive_seed(c.seed(), fmt::format("seg.demo.{}", theme_name(theme))));
    const auto top = static_cast<std::size_t>(std::floor(static_cast<double>(d.height) * aug.crop_top));
    for (std::size_t i = 0; i < std::min(per_theme, d.records.size()); ++i) {
      images.push_back(crop(d.image(i), aug.crop_top, aug.crop_bottom));
      SegmentationMap m(images.back().height, d.width);
      std::copy_n(d.records[i].seg.data() + top * d.width, m.classes.size(), m.classes.data());
      labels.push_back(std::move(m));
    }
  }
}

Checkpoint segnet_checkpoint(SegNet& net, std::uint64_t seed) {
  Checkpoint c;
  c.kind = "segnet";
  c.seed = seed;
  c.config = {{"classes", std::to_string(kNumSceneClasses)}};
  store_parameters(c, net.parameters(), net.buffers(), false);
  return c;
}

SegNet load_segnet(const std::filesystem::path& path) {
  const Checkpoint c = read_checkpoint(path);
  if (c.kind != "segnet") throw FormatError(path.string() + " is a '" + c.kind + "' checkpoint, not a segmentation network");
  SegNet net(c.seed);
  load_parameters(c, net.parameters(), net.buffers(), false);
  return net;
}

PreparedData load_prepared(const RunConfig& c, const Dataset& dataset, const SegNet* segnet) {
  const PrepareConfig p = prepare_config(c);
  const auto raw = raw_dir(c);
  const std::string key = fmt::format(
      "dataset {:016x} {:016x}\nsegmentation {}\ncrop {} {}\npad {} {}\nflow {} {} {}\n", file_digest(raw / "manifest.txt"),
      file_digest(raw / "records.bin"), segnet ? fmt::format("{:016x}", file_digest(segnet_path(c))) : "ground-truth",
      p.augment.crop_top, p.augment.crop_bottom, p.pad_top, p.pad_bottom, p.flow.alpha, p.flow.iterations, p.flow.levels);
  return prepare_data_cached(dataset, segnet, p, c.path("data.dir") / "cache" / (segnet ? "predicted" : "ground_truth"), key);
}

Split split_for(const RunConfig& c, const PreparedData& data) {
  return split_by_episode(data, c.number("train.val_fraction"), c.number("train.test_fraction"),
                          derive_seed(c.seed(), "split"));
}

void cmd_generate(const RunConfig& c) {
  const auto dir = c.path("data.dir");
  const Dataset raw = generate_demonstrations(c);
  write_dataset(raw, dir / "raw");
  spdlog::info("wrote {} records from {} episodes to {}", raw.records.size(), raw.episodes.size(), (dir / "raw").string());
  if (c.flag("generate.augment")) {
    const AugmentConfig aug = augment_config(c);
    std::vector<std::size_t> all(raw.records.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto plan = build_augmentation_plan(raw, all, aug, derive_seed(c.seed(), "augment.plan"));
    write_dataset(materialize_dataset(raw, plan, aug), dir / "augmented");
    write_provenance(plan, dir / "augmented" / "provenance.txt");
    spdlog::info("wrote {} augmented samples to {}", plan.size(), (dir / "augmented").string());
  }
  c.write_resolved(dir / "config.txt");
}

void cmd_pretrain(const RunConfig& c) {
  const auto dir = c.path("pretrain.dir");
  std::filesystem::create_directories(dir);
  std::vector<Image> images;
  std::vector<SegmentationMap> labels;
  segmentation_frames(c, images, labels);
  SegTrainReport seg_report;
  const SegTrainConfig seg_config = seg_train_config(c);
  SegNet net = train_segmentation(images, labels, seg_config, &seg_report);
  write_checkpoint(segnet_checkpoint(net, seg_config.seed), segnet_path(c));
  {
    std::ofstream out(dir / "segnet_loss.csv", std::ios::binary);
    out << "epoch,loss\n";
    for (std::size_t i = 0; i < seg_report.epoch_loss.size(); ++i) out << fmt::format("{},{}\n", i + 1, seg_report.epoch_loss[i]);
  }
  spdlog::info("segmentation: pixel accuracy {:.4f} on {} training frames", seg_report.train_accuracy, images.size());

  const AtnConfig model = ablation_variant(model_config(c), "atn_base");
  const PretextResult pretext = pretext_pretrain(model, &net, prepare_config(c), pretext_config(c));
  write_checkpoint(pretext.checkpoint, dir / "pretext.ckpt");
  {
    std::ofstream out(dir / "pretext_loss.csv", std::ios::binary);
    out << "epoch,loss\n";
    for (std::size_t i = 0; i < pretext.epoch_loss.size(); ++i) out << fmt::format("{},{}\n", i + 1, pretext.epoch_loss[i]);
  }
  spdlog::info("pretext: accuracy {:.4f} train, {:.4f} held out", pretext.train_accuracy, pretext.val_accuracy);
  c.write_resolved(dir / "config.txt");
}

void cmd_train(const RunConfig& c) {
  const AtnConfig model_cfg = model_config(c);
  const TrainConfig train = train_config(c);
  const Dataset dataset = load_dataset(c);
  const auto segnet = maybe_segnet(c, uses_predicted_seg(c, model_cfg));
  const PreparedData data = load_prepared(c, dataset, segnet.get());
  const Split split = split_for(c, data);
  AtnModel model(model_cfg, derive_seed(c.seed(), "model"));
  if (model_cfg.backbone == "pretext_transfer" && !train.resume) {
    const auto path = pretext_path(c);
    if (!std::filesystem::exists(path)) throw UsageError("no pretext checkpoint at " + path.string() + " (run pretrain first)");
    model.load_backbone(read_checkpoint(path));
  }
  std::filesystem::create_directories(train.out_dir);
  c.write_resolved(train.out_dir / "config.txt");
  const TrainResult result = train_policy(model, data, split, train);
  spdlog::info("best validation RMSE {:.3f} deg at epoch {}", std::sqrt(result.best_val_loss), result.best_epoch);
}

void cmd_evaluate(const RunConfig& c) {
  const AtnModel model = load_model(checkpoint_path(c));
  const Dataset dataset = load_dataset(c);
  const auto segnet = maybe_segnet(c, uses_predicted_seg(c, model.config()));
  const PreparedData data = load_prepared(c, dataset, segnet.get());
  const Split split = split_for(c, data);
  const std::string which = c.text("eval.split");
  const auto records = split_records(split, which, data.size());
  if (records.empty()) throw UsageError("the " + which + " split is empty");
  const PredictionSeries series = predict_series(model, data, records);
  const OfflineFailures failures =
      offline_failures(series, c.integer("eval.failure_window"), c.number("eval.failure_threshold_deg"));
  const auto dir = c.path("eval.dir");
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "metrics.csv", std::ios::binary);
    out << "split,records,rmse,mce,offline_failures,offline_fail_per_10km,distance_m\n";
    out << fmt::format("{},{},{},{},{},{},{}\n", which, series.size(), rmse(series), mce(series), failures.count,
                       failures.per_10km, failures.distance_m);
  }
  {
    std::ofstream out(dir / "predictions.csv", std::ios::binary);
    out << "record,episode,truth_deg,predicted_deg\n";
    for (std::size_t i = 0; i < records.size(); ++i) {
      out << fmt::format("{},{},{},{}\n", records[i], data.episode_of[records[i]], series.truth[i], series.predicted[i]);
    }
  }
  c.write_resolved(dir / "config.txt");
  spdlog::info("{}: rmse {:.3f}  mce {:.3f}  offline failures {} ({:.2f} per 10 km)", which, rmse(series), mce(series),
               failures.count, failures.per_10km);
}

void cmd_rollout(const RunConfig& c) {
  const AtnModel model = load_model(checkpoint_path(c));
  const auto segnet = maybe_segnet(c, model.config().enable_segmentation);
  const RolloutConfig rollout = rollout_config(c);
  const auto dir = c.path("rollout.dir");
  std::filesystem::create_directories(dir);
  std::ofstream summary(dir / "summary.csv", std::ios::binary);
  summary << "theme,track_seed,distance_m,failures,fail_per_10km\n";
  for (const TrackSpec& track : evaluation_tracks(c, rollout.distance_km)) {
    ModelSteering policy(model, segnet.get(), prepare_config(c), c.integer("rollout.frame_stride"));
    RolloutConfig run = rollout;
    run.seed = derive_seed(rollout.seed, theme_name(track.theme));
    const EpisodeLog log = closed_loop_rollout(policy, track, run);
    write_episode_csv(log, dir / fmt::format("{}.csv", theme_name(track.theme)));
    summary << fmt::format("{},{},{},{},{}\n", theme_name(track.theme), track.seed, log.distance_travelled,
                           log.failure_events.size(), log.failures_per_10km());
    spdlog::info("{}: {:.0f} m, {} failures ({:.2f} per 10 km)", theme_name(track.theme), log.distance_travelled,
                 log.failure_events.size(), log.failures_per_10km());
  }
  c.write_resolved(dir / "config.txt");
}

void cmd_ablate(const RunConfig& c) {
  const AblationConfig ablation = ablation_config(c);
  bool need_seg = false, need_pretext = false;
  for (const auto& v : ablation.variants) {
    const AtnConfig m = ablation_variant(ablation.overrides, v);
    need_seg = need_seg || m.enable_segmentation;
    need_pretext = need_pretext || m.backbone == "pretext_transfer";
  }
  const Dataset dataset = load_dataset(c);
  const auto segnet = maybe_segnet(c, need_seg);
  if (need_seg && c.flag("seg.ground_truth")) throw ConfigError("ablation rollouts need predicted segmentation");
  const PreparedData data = load_prepared(c, dataset, segnet.get());
  const Split split = split_for(c, data);
  std::optional<Checkpoint> pretext;
  if (need_pretext) {
    const auto path = pretext_path(c);
    if (!std::filesystem::exists(path)) throw UsageError("no pretext checkpoint at " + path.string() + " (run pretrain first)");
    pretext = read_checkpoint(path);
  }
  const auto tracks = evaluation_tracks(c, ablation.rollout.distance_km);
  const AblationReport report = run_ablation(data, split, segnet.get(), prepare_config(c), tracks, ablation,
                                             pretext ? &*pretext : nullptr);
  emit_report(report, ablation.out_dir / "ablation");
  c.write_resolved(ablation.out_dir / "config.txt");
}

std::string cmd_report(const RunConfig& c) {
  const auto path = c.path("ablate.dir") / "ablation.csv";
  return format_report_table(read_report_csv(path));
}

}  // namespace atn
