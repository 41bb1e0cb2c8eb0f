#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "atn/commands.hpp"
#include "atn/errors.hpp"
#include "atn/run_config.hpp"
#include "fixtures.hpp"

using namespace atn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// Exit status of the atn binary, or -1 when it is not available.
int run_cli(const std::string& args) {
  const char* cli = std::getenv("ATN_CLI");
  if (!cli) return -1;
  const int status = std::system((std::string(cli) + " -q " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

RunConfig tiny_run(const fs::path& root) {
  RunConfig c;
  for (const char* d : {"data", "pretrain", "train", "eval", "rollout", "ablate"}) {
    c.set(std::string(d) + ".dir", (root / d).string());
  }
  c.set("data.episodes", "4");
  c.set("data.track_length", "1400");
  c.set("demo.episode_seconds", "25");
  c.set("model.variant", "no_seg");
  c.set("model.conv_depths", "8,12,16,16,16");
  c.set("model.lstm_width", "32");
  c.set("model.fc_widths", "64,32,16");
  c.set("train.val_fraction", "0.25");
  c.set("train.test_fraction", "0.25");
  return c;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("run config keys and values") {
  RunConfig c;
  CHECK(c.integer("seed") == 1);
  CHECK(c.text("model.variant") == "atn_base");
  CHECK(c.list("rollout.themes") == std::vector<std::string>{"desert", "suburb", "mountain"});
  CHECK_THROWS_AS(c.set("model.varient", "baseline"), ConfigError);
  CHECK_THROWS_AS(c.set("train.epochs", "ten"), ConfigError);
  CHECK_THROWS_AS(c.set("train.resume", "maybe"), ConfigError);
  CHECK_THROWS_AS(c.set_assignment("train.epochs"), ConfigError);
  CHECK(c.integer("train.epochs") == 10);
  c.set_assignment("train.epochs=4");
  CHECK(c.integer("train.epochs") == 4);
  CHECK(RunConfig() == RunConfig());
  CHECK_FALSE(c == RunConfig());
}

TEST_CASE("config files, flag precedence and resolved round trip") {
  const auto dir = testing::scratch_dir("run_config");
  {
    std::ofstream f(dir / "a.txt");
    f << "# experiment\nseed = 7\ntrain.epochs = 3   # short\n\nmodel.variant = no_flow\n";
  }
  RunConfig c = RunConfig::from_file(dir / "a.txt");
  CHECK(c.seed() == 7);
  CHECK(c.integer("train.epochs") == 3);
  c.set_assignment("train.epochs=5");
  CHECK(c.integer("train.epochs") == 5);

  c.write_resolved(dir / "resolved.txt");
  const RunConfig back = RunConfig::from_file(dir / "resolved.txt");
  CHECK(back == c);
  CHECK(back.resolved() == c.resolved());
  std::size_t lines = 0;
  std::istringstream r(c.resolved());
  for (std::string line; std::getline(r, line);) ++lines;
  CHECK(lines == config_keys().size());

  {
    std::ofstream f(dir / "bad.txt");
    f << "seed = 2\nno.such.key = 1\n";
  }
  try {
    RunConfig::from_file(dir / "bad.txt");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bad.txt:2") != std::string::npos);
  }
  CHECK_THROWS_AS(RunConfig::from_file(dir / "absent.txt"), Error);
}

TEST_CASE("module configs follow the run config") {
  RunConfig c;
  c.set("model.variant", "no_lstm");
  c.set("augment.crop_top", "0.25");
  c.set("augment.crop_bottom", "0.125");
  c.set("camera.height", "64");
  const AtnConfig m = model_config(c);
  CHECK_FALSE(m.enable_lstm);
  CHECK(m.input_height == 48);
  CHECK(train_config(c).optimizer.learning_rate == 1e-3);
  CHECK(train_config(c).optimizer.halving_factor == 0.5);
  c.set("rollout.themes", "mountain,desert");
  CHECK(rollout_themes(c) == std::vector<Theme>{Theme::Mountain, Theme::Desert});
  c.set("rollout.themes", "desert,moon");
  CHECK_THROWS_AS(rollout_themes(c), ConfigError);
}

TEST_CASE("exit status") {
  if (!std::getenv("ATN_CLI")) {
    MESSAGE("ATN_CLI not set; skipping subprocess checks");
    return;
  }
  const auto dir = testing::scratch_dir("cli_exit");
  CHECK(run_cli("--list-keys") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("--set no.such.key=1 generate") == 2);
  CHECK(run_cli("--set train.epochs=ten train") == 2);
  CHECK(run_cli("--set data.dir=" + (dir / "none").string() + " train") == 2);
  {
    std::ofstream bad(dir / "bad.ckpt");
    bad << "garbage";
  }
  CHECK(run_cli("--set eval.checkpoint=" + (dir / "bad.ckpt").string() + " evaluate") == 4);

  const std::string small = "--set data.dir=" + (dir / "data").string() +
                            " --set data.episodes=1 --set demo.episode_seconds=5 --set data.track_length=400";
  CHECK(run_cli(small + " generate --no-augment") == 0);
  CHECK(fs::exists(dir / "data" / "raw" / "records.bin"));
  CHECK_FALSE(fs::exists(dir / "data" / "augmented"));
  CHECK(run_cli(small + " generate") == 0);
  CHECK(fs::exists(dir / "data" / "augmented" / "provenance.txt"));
}

TEST_CASE("tiny pipeline") {
  const auto root = testing::scratch_dir("cli_pipeline");
  RunConfig c = tiny_run(root);

  SUBCASE("generate is deterministic and honours generate.augment") {
    cmd_generate(c);
    const auto raw = root / "data" / "raw";
    const Dataset ds = read_dataset(raw);
    CHECK(ds.records.size() == 4 * 25 * 2);
    CHECK(fs::exists(root / "data" / "augmented" / "records.bin"));
    CHECK(fs::exists(root / "data" / "config.txt"));
    CHECK(RunConfig::from_file(root / "data" / "config.txt") == c);
    const std::string first = slurp(raw / "records.bin");
    const std::string first_aug = slurp(root / "data" / "augmented" / "records.bin");
    fs::remove_all(root / "data");
    c.set("generate.augment", "false");
    cmd_generate(c);
    CHECK(slurp(raw / "records.bin") == first);
    CHECK_FALSE(fs::exists(root / "data" / "augmented"));
    c.set("generate.augment", "true");
    cmd_generate(c);
    CHECK(slurp(root / "data" / "augmented" / "records.bin") == first_aug);
  }

  SUBCASE("train, resume, evaluate, rollout, ablate, report") {
    c.set("generate.augment", "false");
    cmd_generate(c);
    CHECK_THROWS_AS(cmd_evaluate(c), UsageError);

    c.set("train.epochs", "30");
    c.set("augment.flip", "false");
    c.set("augment.upsample", "false");
    c.set("augment.brightness_min", "1");
    c.set("augment.brightness_max", "1");
    c.set("model.conv_dropout", "0");
    c.set("model.fc_dropout", "0");
    c.set("train.batch_size", "8");
    cmd_train(c);
    CHECK(RunConfig::from_file(root / "train" / "config.txt") == c);

    const auto loss = read_csv(root / "train" / "loss.csv");
    REQUIRE(loss.size() == 31);
    CHECK(loss[0] == std::vector<std::string>{"epoch", "train_loss", "train_rmse", "val_loss", "val_rmse",
                                              "learning_rate"});
    for (std::size_t i = 2; i < loss.size(); ++i) {
      const double lr = std::stod(loss[i][5]), prev = std::stod(loss[i - 1][5]);
      CHECK((lr == prev || lr == 0.5 * prev));
    }

    c.set("train.epochs", "32");
    c.set("train.resume", "true");
    cmd_train(c);
    const auto resumed = read_csv(root / "train" / "loss.csv");
    REQUIRE(resumed.size() == 33);
    for (std::size_t i = 1; i < resumed.size(); ++i) CHECK(resumed[i][0] == std::to_string(i));
    for (std::size_t i = 1; i < 31; ++i) CHECK(resumed[i] == loss[i]);
    c.set("train.resume", "false");

    // Held-out split is disjoint from training records.
    const Dataset ds = read_dataset(root / "data" / "raw");
    const PreparedData data = load_prepared(c, ds, nullptr);
    const Split split = split_for(c, data);
    for (auto r : split.val) CHECK(std::find(split.train.begin(), split.train.end(), r) == split.train.end());

    c.set("eval.split", "train");
    cmd_evaluate(c);
    const auto metrics = read_csv(root / "eval" / "metrics.csv");
    REQUIRE(metrics.size() == 2);
    CHECK(metrics[1][0] == "train");
    MESSAGE("overfit training rmse " << metrics[1][2]);
    CHECK(std::stod(metrics[1][2]) < 1.0);
    CHECK(fs::exists(root / "eval" / "predictions.csv"));

    c.set("rollout.distance_km", "0.2");
    c.set("rollout.themes", "desert");
    cmd_rollout(c);
    const auto summary = read_csv(root / "rollout" / "summary.csv");
    REQUIRE(summary.size() == 2);
    const double distance = std::stod(summary[1][2]);
    CHECK(distance >= 200.0);
    CHECK(distance <= 200.0 + 15.0 * 0.1 * 1.05);
    CHECK(fs::exists(root / "rollout" / "desert.csv"));

    c.set("ablate.variants", "no_seg,baseline");
    c.set("ablate.seeds", "1");
    c.set("ablate.rollout_km", "0.05");
    c.set("train.epochs", "1");
    c.set("train.samples_per_epoch", "32");
    cmd_ablate(c);
    const auto report = read_csv(root / "ablate" / "ablation.csv");
    REQUIRE(report.size() == 5);
    CHECK(report[1][0] == "no_seg");
    CHECK(report[2][1] == "mean");
    CHECK(report[3][0] == "baseline");
    const std::string table = cmd_report(c);
    CHECK(table == slurp(root / "ablate" / "ablation.txt"));

    c.set("ablate.variants", "atn_base");
    CHECK_THROWS_AS(cmd_ablate(c), UsageError);
  }
}

}  // TEST_SUITE
