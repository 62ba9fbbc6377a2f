// Independent reference implementations used only to cross-check the
// library. Kept deliberately naive and separate from the code under
// test: straight loops, no shared helpers.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "uncseg/tensor.hpp"

namespace oracles {

// Plain quintuple-loop valid dilated convolution in double precision.
uncseg::DTensor conv2d_reference(const uncseg::DTensor& input, const uncseg::DTensor& weights,
                                 const uncseg::DTensor& bias, int kernel, int dilation);

// Largest 6-connected component per foreground class via breadth-first
// search; everything else of that class becomes background. Ties by
// smallest minimum linear index.
uncseg::LabelMap largest_component_reference(const uncseg::LabelMap& labels);

// Textbook Adam with decoupled weight decay, double precision, written
// against the update equations rather than the library code.
struct ReferenceAdam {
  double lr = 0.02, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 1e-4;
  std::vector<double> m, v;
  long step = 0;

  void update(std::vector<double>& theta, const std::vector<double>& grad);
};

// Two-pass population variance per (class, voxel), then max over
// classes; samples are [4,H,W] probability maps.
uncseg::Tensor max_variance_reference(const std::vector<uncseg::Tensor>& samples);

// Nearest-rank percentile on a fully sorted copy.
float percentile_reference(std::vector<float> values, double p);

// Referral curve by explicit mask reconstruction and set counting.
struct ReferralRefPoint {
  double threshold;
  double frac_referred;
  std::array<double, 3> dice_fg;
};
std::vector<ReferralRefPoint> referral_reference(const uncseg::Tensor& probs,
                                                 const uncseg::LabelMap& ref,
                                                 const uncseg::Tensor& umap,
                                                 const std::vector<double>& thresholds);

}  // namespace oracles
