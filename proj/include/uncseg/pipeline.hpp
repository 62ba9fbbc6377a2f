#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "uncseg/config.hpp"
#include "uncseg/eval.hpp"
#include "uncseg/losses.hpp"
#include "uncseg/uncertainty.hpp"

namespace uncseg {

enum class PredictMode { mc, single };

const char* predict_mode_name(PredictMode m);

// Output tree layout under config.out_dir.
struct OutPaths {
  std::string root;

  explicit OutPaths(std::string out_dir) : root(std::move(out_dir)) {}
  std::string case_dir(int id) const;
  std::string folds_file() const;
  std::string checkpoints_dir(LossKind loss, int fold) const;
  std::string snapshot_dir(LossKind loss, int fold, int cycle) const;
  std::string train_log(LossKind loss, int fold) const;
  std::string predictions_dir(LossKind loss, PredictMode mode, int fold) const;
  std::string prediction_case_dir(LossKind loss, PredictMode mode, int fold, int id) const;
  std::string analysis_dir() const;
};

// Generates the seeded phantom cases and the cross-validation folds.
void run_phantom(const ExperimentConfig& config);

struct TrainResult {
  std::vector<int> snapshot_cycles;
  float final_loss = 0.0f;
  double wall_seconds = 0.0;
};

// Full training loop for one loss and fold; persists the kept
// snapshots and the per-iteration log.
TrainResult run_train(const ExperimentConfig& config, LossKind loss, int fold);

// Inference over the fold's test cases. mc uses every kept snapshot
// with dropout enabled and writes max-variance maps; single uses the
// last snapshot once with dropout disabled and writes entropy maps.
void run_predict(const ExperimentConfig& config, int fold, PredictMode mode,
                 const std::vector<LossKind>& losses);

struct ReferralSummary {
  // indexed like config.referral_quantiles
  std::vector<double> thresholds;
  std::vector<double> frac_referred;          // mean per case volume
  std::vector<double> mean_dice_fg;           // mean over classes, phases, cases
  double baseline_dice = 0.0;                 // at the 100% quantile
  double gain_at_1pct = 0.0;                  // dice(99% quantile) - baseline
};

struct AnalyzeSummary {
  // per (loss, mode): mean foreground Dice of the stored (post
  // processed) segmentations, pooled ECE over phases
  std::map<std::pair<LossKind, PredictMode>, double> dice_fg;
  std::map<std::pair<LossKind, PredictMode>, double> ece;
  // per (loss, map kind)
  std::map<std::pair<LossKind, MapKind>, ReferralSummary> referral;
};

// Reliability CSVs, referral CSVs, the loss-vs-confidence curve CSV
// and a plain-text summary; returns the headline numbers.
AnalyzeSummary run_analyze(const ExperimentConfig& config);

// Preprocessing shared by training and inference: resample each slice
// to 1.4 mm in-plane (bilinear images, nearest-neighbor labels) and
// normalize each volume to [0,1] by its 5th and 95th intensity
// percentiles.
PhantomCase preprocess_case(const PhantomCase& raw);

}  // namespace uncseg
