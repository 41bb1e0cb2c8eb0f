// atn: data generation, pretraining, training, evaluation, rollouts and
// ablations for the auxiliary-task steering network.
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "atn/commands.hpp"

namespace {

// Exit codes: 2 configuration or usage, 3 numeric, 4 file format, 1 other.
int exit_code(const atn::Error& e) {
  if (dynamic_cast<const atn::NumericError*>(&e)) return 3;
  if (dynamic_cast<const atn::FormatError*>(&e)) return 4;
  return 2;
}

void print_keys() {
  for (const auto& k : atn::config_keys()) {
    std::printf("%-34s = %-28s %s%s\n", std::string(k.name).c_str(), std::string(k.default_value).c_str(),
                k.help.empty() ? "" : "# ", std::string(k.help).c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Auxiliary-task steering network: generate, pretrain, train, evaluate, rollout, ablate, report"};
  app.require_subcommand(0, 1);
  std::vector<std::string> config_files;
  std::vector<std::string> assignments;
  bool verbose = false, quiet = false, list_keys = false;
  app.add_option("-c,--config", config_files, "key = value config file (later files override earlier ones)")
      ->check(CLI::ExistingFile);
  app.add_option("-s,--set", assignments, "override one setting, key=value (wins over config files)");
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("-q,--quiet", quiet, "warnings and errors only");
  app.add_flag("--list-keys", list_keys, "print every setting with its default and exit");

  auto* generate = app.add_subcommand("generate", "collect expert demonstrations and the augmented dataset");
  bool no_augment = false;
  generate->add_flag("--no-augment", no_augment, "write the raw dataset only");
  app.add_subcommand("pretrain", "train the segmentation network and the pretext backbone");
  auto* train = app.add_subcommand("train", "train the steering policy");
  bool resume = false;
  train->add_flag("--resume", resume, "continue from <train.dir>/last.ckpt");
  app.add_subcommand("evaluate", "offline metrics on a held-out split");
  app.add_subcommand("rollout", "closed-loop driving on one track per theme");
  app.add_subcommand("ablate", "train and score every requested variant over every seed");
  app.add_subcommand("report", "print the ablation table");

  CLI11_PARSE(app, argc, argv);
  if (list_keys) {
    print_keys();
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return 2;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    atn::RunConfig config;
    for (const auto& f : config_files) config.merge_file(f);
    if (no_augment) config.set("generate.augment", "false");
    if (resume) config.set("train.resume", "true");
    for (const auto& a : assignments) config.set_assignment(a);

    if (command == "generate") atn::cmd_generate(config);
    else if (command == "pretrain") atn::cmd_pretrain(config);
    else if (command == "train") atn::cmd_train(config);
    else if (command == "evaluate") atn::cmd_evaluate(config);
    else if (command == "rollout") atn::cmd_rollout(config);
    else if (command == "ablate") atn::cmd_ablate(config);
    else if (command == "report") std::cout << atn::cmd_report(config);
  } catch (const atn::Error& e) {
    spdlog::error("{}: {}", command, e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", command, e.what());
    return 1;
  }
  return 0;
}
