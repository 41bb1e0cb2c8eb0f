#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <limits>
#include <vector>

#include "atn/model.hpp"
#include "atn/optim.hpp"
#include "atn/pipeline.hpp"
#include "atn/sim.hpp"

namespace atn {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::size_t samples_per_epoch = 0;  // 0 = the whole augmented plan
  // Records used for the per-epoch training RMSE (evenly strided); 0 = all.
  std::size_t train_eval_limit = 2000;
  OptimizerConfig optimizer;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;  // empty = keep everything in memory
  bool resume = false;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;  // mean batch MSE in train mode, degrees^2
  double train_rmse = 0.0;  // infer mode on training records
  double val_loss = 0.0;
  double val_rmse = 0.0;
  double learning_rate = 0.0;  // used during this epoch
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

// MSE on steering, Adam, plateau halving per epoch on the validation loss.
// The model ends holding its best-validation parameters. With out_dir set,
// writes loss.csv, best.ckpt and last.ckpt (resumable); a non-finite loss or
// gradient writes last_good.ckpt and throws NumericError.
TrainResult train_policy(AtnModel& model, const PreparedData& data, const Split& split, const TrainConfig& config);

void write_loss_csv(const std::vector<EpochStats>& history, const std::filesystem::path& path);

// First epoch whose validation RMSE is at or below `threshold`, or 0.
std::size_t epochs_to_reach(const std::vector<EpochStats>& history, double threshold);

struct PretextConfig {
  std::size_t train_frames = 2700;
  std::size_t val_frames = 540;
  std::size_t epochs = 6;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t tracks_per_theme = 3;
  double track_length = 1500.0;
  std::uint64_t seed = 0;
};

// Scene attribute classes: curve direction (left, straight, right) crossed
// with theme, 9 classes. Ambiguous curvature is discarded.
struct PretextSample {
  std::vector<float> input;  // [C, H, W]
  int label = 0;
};

struct PretextResult {
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  Checkpoint checkpoint;  // backbone parameters and statistics only
};

std::vector<PretextSample> make_pretext_samples(const AtnConfig& config, const SegNet* segnet,
                                                const PrepareConfig& prepare, const PretextConfig& pretext,
                                                std::size_t count, std::uint64_t track_seed);

// Trains the backbone of `config` plus a throwaway linear classifier.
PretextResult pretext_pretrain(const AtnConfig& config, const SegNet* segnet, const PrepareConfig& prepare,
                               const PretextConfig& pretext);

// Closed-loop driver: crops each camera frame, predicts segmentation, takes
// flow against the frame `frame_stride` control steps back and feeds windows
// spaced `frame_stride` steps apart to the model.
class ModelSteering : public SteeringPolicy {
 public:
  ModelSteering(const AtnModel& model, const SegNet* segnet, PrepareConfig prepare, std::size_t frame_stride = 5);

  void reset() override;
  double act(const Observation& obs) override;

 private:
  const AtnModel& model_;
  const SegNet* segnet_;
  PrepareConfig prepare_;
  std::size_t stride_;
  std::deque<Image> crops_;
  std::deque<Tensor> contexts_;
};

}  // namespace atn
