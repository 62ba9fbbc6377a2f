#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "uncseg/tensor.hpp"

namespace uncseg {

// Per-voxel argmax over the class axis; ties go to the lowest class id.
LabelMap argmax_labels(const Tensor& probs);  // [4,...] -> [...]

// 2|P n R| / (|P| + |R|); 1 when both masks are empty, 0 when exactly
// one is.
double dice(const LabelMap& pred, const LabelMap& ref, int class_id);

// For each foreground class independently, keep only the largest
// 6-connected (face adjacency) 3D component and push the rest to
// background. Size ties go to the component containing the smallest
// linear voxel index.
LabelMap largest_component_filter(const LabelMap& labels);

struct ReliabilityBins {
  int num_bins = 10;
  std::vector<std::int64_t> count;
  std::vector<std::int64_t> tp;
  std::vector<double> conf_sum;

  explicit ReliabilityBins(int bins = 10)
      : num_bins(bins), count(std::size_t(bins), 0), tp(std::size_t(bins), 0),
        conf_sum(std::size_t(bins), 0.0) {}

  void add(double p, bool correct);
  void merge(const ReliabilityBins& other);
  std::int64_t total() const;
  double ece() const;
};

struct ReliabilityResult {
  ReliabilityBins bins;
  double ece = 0.0;
};

// Deposit every in-scope (voxel, class) pair's predicted probability
// into ten uniform bins with outcome 1 iff the reference label is that
// class. Foreground classes only unless include_background.
ReliabilityResult reliability_bins(const Tensor& probs, const LabelMap& ref,
                                   bool include_background = false);

struct ReferralPoint {
  double threshold = 0.0;
  double frac_referred = 0.0;
  std::array<double, 3> dice_fg{};  // RV, Myo, LV
};

// Human-in-the-loop simulation: voxels whose uncertainty exceeds the
// threshold are corrected to the reference label, the rest keep the
// argmax prediction; Dice is recomputed per foreground class.
// Thresholds must be sorted descending.
std::vector<ReferralPoint> referral_curve(const Tensor& pred_probs, const LabelMap& ref,
                                          const Tensor& umap,
                                          const std::vector<double>& thresholds);

// Nearest-rank quantiles of the pooled map values for a descending
// list of percentages, e.g. {100, 99.5, ..., 80}.
std::vector<double> quantile_thresholds(const std::vector<float>& values,
                                        const std::vector<double>& percents);

}  // namespace uncseg
