#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "atn/run_config.hpp"

namespace atn {

// Building blocks shared by the subcommands and the acceptance checks. All
// randomness comes from derive_seed(config seed, tag).
std::vector<TrackSpec> demonstration_tracks(const RunConfig& config);
Dataset generate_demonstrations(const RunConfig& config);
// One track per rollout theme, long enough for `distance_km`.
std::vector<TrackSpec> evaluation_tracks(const RunConfig& config, double distance_km);

// Labelled frames from every theme, cropped like the policy input.
void segmentation_frames(const RunConfig& config, std::vector<Image>& images, std::vector<SegmentationMap>& labels);
Checkpoint segnet_checkpoint(SegNet& net, std::uint64_t seed);
SegNet load_segnet(const std::filesystem::path& path);

// Dataset from <data.dir>/raw with segmentation and flow, cached under
// <data.dir>/cache.
PreparedData load_prepared(const RunConfig& config, const Dataset& dataset, const SegNet* segnet);
Split split_for(const RunConfig& config, const PreparedData& data);

// Subcommands. Each writes its resolved config next to its outputs and
// throws an atn::Error on any contract violation.
void cmd_generate(const RunConfig& config);
void cmd_pretrain(const RunConfig& config);
void cmd_train(const RunConfig& config);
void cmd_evaluate(const RunConfig& config);
void cmd_rollout(const RunConfig& config);
void cmd_ablate(const RunConfig& config);
// Returns the aligned table of <ablate.dir>/ablation.csv.
std::string cmd_report(const RunConfig& config);

}  // namespace atn
