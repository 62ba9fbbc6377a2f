// Command line front end: phantom generation, training, prediction,
// analysis and the gradient self-check, all driven by one config file.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uncseg/config.hpp"
#include "uncseg/gradcheck.hpp"
#include "uncseg/losses.hpp"
#include "uncseg/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct Options {
  std::string config_path;
  std::string loss = "ce";
  std::string mode = "mc";
  int fold = 0;
  bool loss_given = false;
};

int run_gradcheck() {
  std::cout << "layer and loss gradients vs central finite differences (20 seeds)\n";
  auto results = uncseg::run_layer_loss_checks(20, &std::cout);
  std::cout << "end-to-end spot checks through the default network\n";
  results.push_back(uncseg::run_end_to_end_check(uncseg::NetworkConfig::defaults(), 141, 50,
                                                 1234, &std::cout));
  bool ok = true;
  for (const auto& r : results) ok = ok && r.pass;
  std::cout << (ok ? "gradient checks passed\n" : "gradient checks FAILED\n");
  return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uncseg: uncertainty-aware cardiac phantom segmentation"};
  app.require_subcommand(1);
  Options opt;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", opt.config_path, "experiment config file")->required();
  };

  CLI::App* phantom = app.add_subcommand("phantom", "generate the phantom dataset and folds");
  add_config(phantom);

  CLI::App* train = app.add_subcommand("train", "train one loss on one fold");
  add_config(train);
  train->add_option("--loss", opt.loss, "loss function: ce, sd or bs")->required();
  train->add_option("--fold", opt.fold, "fold index")->required();

  CLI::App* predict = app.add_subcommand("predict", "predict the fold's test cases");
  add_config(predict);
  predict->add_option("--mode", opt.mode, "mc (snapshot ensemble, dropout on) or single")
      ->required()
      ->check(CLI::IsMember({"mc", "single"}));
  predict->add_option("--fold", opt.fold, "fold index")->required();
  predict->add_option("--loss", opt.loss, "restrict to one loss")
      ->each([&](const std::string&) { opt.loss_given = true; });

  CLI::App* analyze = app.add_subcommand("analyze", "reliability, referral and summary outputs");
  add_config(analyze);

  app.add_subcommand("gradcheck", "finite-difference check of every gradient");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // exits 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (app.got_subcommand("gradcheck")) return run_gradcheck();

    uncseg::ExperimentConfig config;
    try {
      config = uncseg::parse_config_file(opt.config_path);
    } catch (const uncseg::ConfigError& e) {
      std::cerr << e.what() << "\n";
      return kExitUsage;
    }

    if (app.got_subcommand("phantom")) {
      uncseg::run_phantom(config);
      std::cout << "wrote " << config.num_cases << " cases under " << config.out_dir << "\n";
    } else if (app.got_subcommand("train")) {
      const uncseg::LossKind loss = uncseg::loss_from_code(opt.loss);
      uncseg::TrainResult r = uncseg::run_train(config, loss, opt.fold);
      std::printf("trained %s fold %d: %zu snapshots, final loss %.5g, %.1f s\n", opt.loss.c_str(),
                  opt.fold, r.snapshot_cycles.size(), double(r.final_loss), r.wall_seconds);
    } else if (app.got_subcommand("predict")) {
      std::vector<uncseg::LossKind> losses = config.losses;
      if (opt.loss_given) losses = {uncseg::loss_from_code(opt.loss)};
      const uncseg::PredictMode mode =
          opt.mode == "mc" ? uncseg::PredictMode::mc : uncseg::PredictMode::single;
      uncseg::run_predict(config, opt.fold, mode, losses);
      std::cout << "predictions written under " << config.out_dir << "/predictions\n";
    } else if (app.got_subcommand("analyze")) {
      uncseg::run_analyze(config);
      std::cout << "analysis written under " << config.out_dir << "/analysis\n";
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
