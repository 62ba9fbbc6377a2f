#include "uncseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace uncseg {

const char* loss_code(LossKind k) {
  switch (k) {
    case LossKind::cross_entropy: return "ce";
    case LossKind::soft_dice: return "sd";
    case LossKind::brier: return "bs";
  }
  throw std::invalid_argument("unknown loss kind");
}

LossKind loss_from_code(const std::string& code) {
  if (code == "ce") return LossKind::cross_entropy;
  if (code == "sd") return LossKind::soft_dice;
  if (code == "bs") return LossKind::brier;
  throw std::invalid_argument("unknown loss code '" + code + "' (expected ce, sd or bs)");
}

namespace {

template <typename T>
std::int64_t check_prob_shapes(const TensorT<T>& probs, const LabelMap& ref) {
  if (probs.ndim() < 2 || probs.dim(0) != kNumClasses) {
    throw std::invalid_argument("loss: probs must be [4, ...spatial]");
  }
  std::vector<int> spatial(probs.dims.begin() + 1, probs.dims.end());
  if (ref.dims != spatial) {
    throw std::invalid_argument("loss: reference dims " + shape_string(ref.dims) +
                                " do not match probs " + shape_string(probs.dims));
  }
  for (std::uint8_t v : ref.data) {
    if (v >= kNumClasses) throw std::invalid_argument("loss: label id out of range");
  }
  return probs.numel() / kNumClasses;
}

}  // namespace

template <typename T>
LossResult<T> cross_entropy(const TensorT<T>& probs, const LabelMap& ref) {
  const std::int64_t V = check_prob_shapes(probs, ref);
  LossResult<T> r;
  r.grad = TensorT<T>(probs.dims);
  double acc = 0.0;
  for (std::int64_t v = 0; v < V; ++v) {
    const int c = ref.data[std::size_t(v)];
    const double p = std::max(double(probs.data[std::size_t(c) * V + v]), kCrossEntropyFloor);
    acc -= std::log(p);
    r.grad.data[std::size_t(c) * V + v] = T(-1.0 / (p * double(V)));
  }
  r.value = T(acc / double(V));
  return r;
}

template <typename T>
LossResult<T> brier(const TensorT<T>& probs, const LabelMap& ref) {
  const std::int64_t V = check_prob_shapes(probs, ref);
  LossResult<T> r;
  r.grad = TensorT<T>(probs.dims);
  const double norm = double(V) * kNumClasses;
  double acc = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    for (std::int64_t v = 0; v < V; ++v) {
      const double g = ref.data[std::size_t(v)] == c ? 1.0 : 0.0;
      const double d = double(probs.data[std::size_t(c) * V + v]) - g;
      acc += d * d;
      r.grad.data[std::size_t(c) * V + v] = T(2.0 * d / norm);
    }
  }
  r.value = T(acc / norm);
  return r;
}

namespace {

struct DiceSums {
  double inter = 0.0;  // sum p*g
  double psq = 0.0;    // sum p^2
  double gsq = 0.0;    // sum g^2 (= count of reference voxels)
};

template <typename T>
DiceSums dice_sums(const TensorT<T>& probs, const LabelMap& ref, int c, std::int64_t V) {
  DiceSums s;
  for (std::int64_t v = 0; v < V; ++v) {
    const double p = probs.data[std::size_t(c) * V + v];
    s.psq += p * p;
    if (ref.data[std::size_t(v)] == c) {
      s.inter += p;
      s.gsq += 1.0;
    }
  }
  return s;
}

}  // namespace

template <typename T>
std::vector<T> soft_dice_per_class(const TensorT<T>& probs, const LabelMap& ref) {
  const std::int64_t V = check_prob_shapes(probs, ref);
  std::vector<T> out;
  for (int c = 1; c < kNumClasses; ++c) {
    DiceSums s = dice_sums(probs, ref, c, V);
    out.push_back(T((2.0 * s.inter + kSoftDiceEps) / (s.psq + s.gsq + kSoftDiceEps)));
  }
  return out;
}

template <typename T>
LossResult<T> soft_dice(const TensorT<T>& probs, const LabelMap& ref) {
  const std::int64_t V = check_prob_shapes(probs, ref);
  LossResult<T> r;
  r.grad = TensorT<T>(probs.dims);
  double mean_dice = 0.0;
  const int fg = kNumClasses - 1;
  for (int c = 1; c < kNumClasses; ++c) {
    DiceSums s = dice_sums(probs, ref, c, V);
    const double num = 2.0 * s.inter + kSoftDiceEps;
    const double den = s.psq + s.gsq + kSoftDiceEps;
    mean_dice += num / den;
    // d dice / d p = (2g*den - num*2p) / den^2; loss takes -1/3 of it
    for (std::int64_t v = 0; v < V; ++v) {
      const double p = probs.data[std::size_t(c) * V + v];
      const double g = ref.data[std::size_t(v)] == c ? 1.0 : 0.0;
      const double ddice = (2.0 * g * den - num * 2.0 * p) / (den * den);
      r.grad.data[std::size_t(c) * V + v] = T(-ddice / double(fg));
    }
  }
  r.value = T(1.0 - mean_dice / double(fg));
  return r;
}

template <typename T>
LossResult<T> compute_loss(LossKind kind, const TensorT<T>& probs, const LabelMap& ref) {
  switch (kind) {
    case LossKind::cross_entropy: return cross_entropy(probs, ref);
    case LossKind::soft_dice: return soft_dice(probs, ref);
    case LossKind::brier: return brier(probs, ref);
  }
  throw std::invalid_argument("unknown loss kind");
}

namespace {

double single_voxel_loss(LossKind kind, double p_true) {
  const double p_other = (1.0 - p_true) / 3.0;
  switch (kind) {
    case LossKind::cross_entropy:
      return -std::log(std::max(p_true, kCrossEntropyFloor));
    case LossKind::brier: {
      double acc = (p_true - 1.0) * (p_true - 1.0) + 3.0 * p_other * p_other;
      return acc / kNumClasses;
    }
    case LossKind::soft_dice: {
      const double num = 2.0 * p_true + kSoftDiceEps;
      const double den = p_true * p_true + 1.0 + kSoftDiceEps;
      return 1.0 - num / den;
    }
  }
  throw std::invalid_argument("unknown loss kind");
}

}  // namespace

std::vector<std::pair<double, double>> loss_for_true_label_curve(LossKind kind, int samples) {
  if (samples < 1) throw std::invalid_argument("loss curve: need at least one sample");
  std::vector<std::pair<double, double>> out;
  out.reserve(std::size_t(samples));
  for (int i = 1; i <= samples; ++i) {
    const double p = double(i) / double(samples);  // (0, 1]
    out.emplace_back(p, single_voxel_loss(kind, p));
  }
  return out;
}

void write_loss_curve_csv(const std::string& path, int samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "p_true,ce,sd,bs\n";
  auto ce = loss_for_true_label_curve(LossKind::cross_entropy, samples);
  auto sd = loss_for_true_label_curve(LossKind::soft_dice, samples);
  auto bs = loss_for_true_label_curve(LossKind::brier, samples);
  char buf[128];
  for (std::size_t i = 0; i < ce.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.10g\n", ce[i].first, ce[i].second,
                  sd[i].second, bs[i].second);
    out << buf;
  }
}

#define UNCSEG_INSTANTIATE_LOSSES(T)                                                 \
  template LossResult<T> cross_entropy<T>(const TensorT<T>&, const LabelMap&);       \
  template LossResult<T> brier<T>(const TensorT<T>&, const LabelMap&);               \
  template LossResult<T> soft_dice<T>(const TensorT<T>&, const LabelMap&);           \
  template std::vector<T> soft_dice_per_class<T>(const TensorT<T>&, const LabelMap&); \
  template LossResult<T> compute_loss<T>(LossKind, const TensorT<T>&, const LabelMap&);

UNCSEG_INSTANTIATE_LOSSES(float)
UNCSEG_INSTANTIATE_LOSSES(double)

#undef UNCSEG_INSTANTIATE_LOSSES

}  // namespace uncseg
