#pragma once

#include <string>
#include <utility>
#include <vector>

#include "uncseg/tensor.hpp"

namespace uncseg {

enum class LossKind { cross_entropy, soft_dice, brier };

const char* loss_code(LossKind k);          // "ce", "sd", "bs"
LossKind loss_from_code(const std::string& code);

constexpr double kCrossEntropyFloor = 1e-12;
constexpr double kSoftDiceEps = 1e-6;

// All losses take a per-voxel normalized probability map [4, ...spatial]
// and a reference label map over the same spatial dims, and return the
// scalar loss plus its exact gradient with respect to the probabilities.
template <typename T>
struct LossResult {
  T value = T(0);
  TensorT<T> grad;
};

// Mean over voxels of -log p(true class), floored at kCrossEntropyFloor.
template <typename T>
LossResult<T> cross_entropy(const TensorT<T>& probs, const LabelMap& ref);

// Mean over voxels and classes of (p_c - onehot_c)^2.
template <typename T>
LossResult<T> brier(const TensorT<T>& probs, const LabelMap& ref);

// 1 - mean over the three foreground classes of
// (2*sum p*g + eps) / (sum p^2 + sum g^2 + eps), sums over voxels.
template <typename T>
LossResult<T> soft_dice(const TensorT<T>& probs, const LabelMap& ref);

// The three per-class soft-dice terms (RV, Myo, LV) behind soft_dice.
template <typename T>
std::vector<T> soft_dice_per_class(const TensorT<T>& probs, const LabelMap& ref);

template <typename T>
LossResult<T> compute_loss(LossKind kind, const TensorT<T>& probs, const LabelMap& ref);

// Loss at a single voxel as a function of the probability assigned to
// the true class, the remaining mass spread uniformly over the other
// three classes. For soft dice this is the dice term of the one class
// present at the voxel; classes absent from a one-voxel reference say
// nothing about how the true label is penalized.
std::vector<std::pair<double, double>> loss_for_true_label_curve(LossKind kind, int samples);

// CSV with columns p_true, ce, sd, bs.
void write_loss_curve_csv(const std::string& path, int samples);

}  // namespace uncseg
