#include "uncseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uncseg {

LabelMap argmax_labels(const Tensor& probs) {
  if (probs.ndim() < 2 || probs.dim(0) != kNumClasses) {
    throw std::invalid_argument("argmax_labels: probs must be [4, ...spatial]");
  }
  std::vector<int> spatial(probs.dims.begin() + 1, probs.dims.end());
  LabelMap out(spatial);
  const std::int64_t V = out.numel();
  for (std::int64_t v = 0; v < V; ++v) {
    int best = 0;
    float best_p = probs.data[std::size_t(v)];
    for (int c = 1; c < kNumClasses; ++c) {
      const float p = probs.data[std::size_t(c) * V + v];
      if (p > best_p) {
        best_p = p;
        best = c;
      }
    }
    out.data[std::size_t(v)] = std::uint8_t(best);
  }
  return out;
}

double dice(const LabelMap& pred, const LabelMap& ref, int class_id) {
  if (!pred.same_shape(ref)) throw std::invalid_argument("dice: shape mismatch");
  std::int64_t np = 0, nr = 0, inter = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] == class_id;
    const bool r = ref.data[i] == class_id;
    np += p;
    nr += r;
    inter += p && r;
  }
  if (np + nr == 0) return 1.0;
  return 2.0 * double(inter) / double(np + nr);
}

namespace {

// union-find over the voxels of one class
struct DisjointSet {
  std::vector<std::int32_t> parent;

  explicit DisjointSet(std::size_t n) : parent(n) {
    for (std::size_t i = 0; i < n; ++i) parent[i] = std::int32_t(i);
  }

  std::int32_t find(std::int32_t x) {
    while (parent[std::size_t(x)] != x) {
      parent[std::size_t(x)] = parent[std::size_t(parent[std::size_t(x)])];
      x = parent[std::size_t(x)];
    }
    return x;
  }

  void unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::size_t(std::max(a, b))] = std::min(a, b);
  }
};

}  // namespace

LabelMap largest_component_filter(const LabelMap& labels) {
  if (labels.ndim() != 3) {
    throw std::invalid_argument("largest_component_filter: labels must be [S,H,W]");
  }
  const int S = labels.dim(0), H = labels.dim(1), W = labels.dim(2);
  const std::int64_t N = labels.numel();
  LabelMap out = labels;

  std::vector<std::int32_t> compact(std::size_t(N), -1);
  for (int cls = 1; cls < kNumClasses; ++cls) {
    std::int32_t n_class = 0;
    for (std::int64_t i = 0; i < N; ++i) {
      compact[std::size_t(i)] = labels.data[std::size_t(i)] == cls ? n_class++ : -1;
    }
    if (n_class == 0) continue;

    DisjointSet ds{std::size_t(n_class)};
    for (int s = 0; s < S; ++s) {
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const std::int64_t i = (std::int64_t(s) * H + y) * W + x;
          const std::int32_t ci = compact[std::size_t(i)];
          if (ci < 0) continue;
          if (x > 0 && compact[std::size_t(i - 1)] >= 0) ds.unite(ci, compact[std::size_t(i - 1)]);
          if (y > 0 && compact[std::size_t(i - W)] >= 0) ds.unite(ci, compact[std::size_t(i - W)]);
          if (s > 0 && compact[std::size_t(i - std::int64_t(H) * W)] >= 0) {
            ds.unite(ci, compact[std::size_t(i - std::int64_t(H) * W)]);
          }
        }
      }
    }

    // component sizes and smallest linear index per root, in one scan
    std::vector<std::int64_t> size(std::size_t(n_class), 0);
    std::vector<std::int64_t> min_index(std::size_t(n_class), -1);
    for (std::int64_t i = 0; i < N; ++i) {
      const std::int32_t ci = compact[std::size_t(i)];
      if (ci < 0) continue;
      const std::int32_t root = ds.find(ci);
      size[std::size_t(root)] += 1;
      if (min_index[std::size_t(root)] < 0) min_index[std::size_t(root)] = i;
    }
    std::int32_t best = -1;
    for (std::int32_t r = 0; r < n_class; ++r) {
      if (size[std::size_t(r)] == 0) continue;
      if (best < 0 || size[std::size_t(r)] > size[std::size_t(best)] ||
          (size[std::size_t(r)] == size[std::size_t(best)] &&
           min_index[std::size_t(r)] < min_index[std::size_t(best)])) {
        best = r;
      }
    }
    for (std::int64_t i = 0; i < N; ++i) {
      const std::int32_t ci = compact[std::size_t(i)];
      if (ci >= 0 && ds.find(ci) != best) out.data[std::size_t(i)] = kBackground;
    }
  }
  return out;
}

void ReliabilityBins::add(double p, bool correct) {
  int b = int(p * num_bins);
  b = std::min(std::max(b, 0), num_bins - 1);
  count[std::size_t(b)] += 1;
  tp[std::size_t(b)] += correct ? 1 : 0;
  conf_sum[std::size_t(b)] += p;
}

void ReliabilityBins::merge(const ReliabilityBins& other) {
  if (other.num_bins != num_bins) throw std::invalid_argument("reliability: bin count mismatch");
  for (int b = 0; b < num_bins; ++b) {
    count[std::size_t(b)] += other.count[std::size_t(b)];
    tp[std::size_t(b)] += other.tp[std::size_t(b)];
    conf_sum[std::size_t(b)] += other.conf_sum[std::size_t(b)];
  }
}

std::int64_t ReliabilityBins::total() const {
  std::int64_t t = 0;
  for (std::int64_t c : count) t += c;
  return t;
}

double ReliabilityBins::ece() const {
  const std::int64_t n = total();
  if (n == 0) return 0.0;
  double e = 0.0;
  for (int b = 0; b < num_bins; ++b) {
    if (count[std::size_t(b)] == 0) continue;
    const double frac = double(count[std::size_t(b)]) / double(n);
    const double acc = double(tp[std::size_t(b)]) / double(count[std::size_t(b)]);
    const double conf = conf_sum[std::size_t(b)] / double(count[std::size_t(b)]);
    e += frac * std::abs(acc - conf);
  }
  return e;
}

ReliabilityResult reliability_bins(const Tensor& probs, const LabelMap& ref,
                                   bool include_background) {
  if (probs.ndim() < 2 || probs.dim(0) != kNumClasses) {
    throw std::invalid_argument("reliability_bins: probs must be [4, ...spatial]");
  }
  std::vector<int> spatial(probs.dims.begin() + 1, probs.dims.end());
  if (ref.dims != spatial) throw std::invalid_argument("reliability_bins: shape mismatch");
  ReliabilityResult r;
  const std::int64_t V = ref.numel();
  for (int c = include_background ? 0 : 1; c < kNumClasses; ++c) {
    for (std::int64_t v = 0; v < V; ++v) {
      r.bins.add(double(probs.data[std::size_t(c) * V + v]), ref.data[std::size_t(v)] == c);
    }
  }
  r.ece = r.bins.ece();
  return r;
}

std::vector<ReferralPoint> referral_curve(const Tensor& pred_probs, const LabelMap& ref,
                                          const Tensor& umap,
                                          const std::vector<double>& thresholds) {
  std::vector<int> spatial(pred_probs.dims.begin() + 1, pred_probs.dims.end());
  if (ref.dims != spatial || umap.dims != spatial) {
    throw std::invalid_argument("referral_curve: shape mismatch");
  }
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (thresholds[i] > thresholds[i - 1]) {
      throw std::invalid_argument("referral_curve: thresholds must be sorted descending");
    }
  }
  const LabelMap base = argmax_labels(pred_probs);
  const std::int64_t V = ref.numel();
  std::vector<ReferralPoint> out;
  LabelMap corrected = base;
  for (double t : thresholds) {
    std::int64_t referred = 0;
    for (std::int64_t v = 0; v < V; ++v) {
      if (double(umap.data[std::size_t(v)]) > t) {
        corrected.data[std::size_t(v)] = ref.data[std::size_t(v)];
        referred += 1;
      } else {
        corrected.data[std::size_t(v)] = base.data[std::size_t(v)];
      }
    }
    ReferralPoint p;
    p.threshold = t;
    p.frac_referred = double(referred) / double(V);
    for (int c = 1; c < kNumClasses; ++c) {
      p.dice_fg[std::size_t(c - 1)] = dice(corrected, ref, c);
    }
    out.push_back(p);
  }
  return out;
}

std::vector<double> quantile_thresholds(const std::vector<float>& values,
                                        const std::vector<double>& percents) {
  if (values.empty()) throw std::invalid_argument("quantile_thresholds: empty values");
  std::vector<float> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  for (double p : percents) {
    const std::size_t n = sorted.size();
    std::size_t rank = std::size_t(std::ceil(p / 100.0 * double(n)));
    rank = std::min(std::max<std::size_t>(rank, 1), n);
    out.push_back(double(sorted[rank - 1]));
  }
  return out;
}

}  // namespace uncseg
