#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "uncseg/losses.hpp"
#include "uncseg/network.hpp"
#include "uncseg/optim.hpp"
#include "uncseg/phantom.hpp"

namespace uncseg {

struct ConfigError : std::runtime_error {
  ConfigError(const std::string& file, int line, const std::string& msg)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + msg), line_number(line) {}
  int line_number;
};

// Every knob of the experiment, read from a flat key = value file with
// [section] headers. All randomness flows from the single root seed.
struct ExperimentConfig {
  // [experiment]
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  // [phantom]
  int num_cases = 100;
  int folds = 4;
  GeometryConfig geometry;

  // [network]
  NetworkConfig network = NetworkConfig::defaults();

  // [train]
  std::vector<LossKind> losses = {LossKind::cross_entropy, LossKind::soft_dice,
                                  LossKind::brier};
  ScheduleConfig schedule;
  int batch_size = 16;
  int patch_size = 151;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // [predict]
  int samples_per_model = 10;

  // [analyze]
  std::vector<double> referral_quantiles = {100, 99.5, 99, 98, 97, 96, 95, 92.5, 90, 85, 80};
  bool include_background = false;
  int curve_samples = 200;

  int pad_to() const { return patch_size + network.receptive_field() - 1; }
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& file_name);
void write_config_file(const std::string& path, const ExperimentConfig& config);
std::string config_to_text(const ExperimentConfig& config);

}  // namespace uncseg
