#include "uncseg/uncertainty.hpp"

#include <cmath>
#include <stdexcept>

#include "uncseg/ops.hpp"

namespace uncseg {

const char* map_kind_name(MapKind k) {
  return k == MapKind::entropy ? "emap" : "umap";
}

std::pair<ClassProbMap, ClassProbMap> split_phases(const Tensor& probs8) {
  if (probs8.ndim() != 3 || probs8.dim(0) != 8) {
    throw std::invalid_argument("split_phases: expected [8,H,W]");
  }
  const int H = probs8.dim(1), W = probs8.dim(2);
  ClassProbMap ed{Tensor({4, H, W}), Phase::ed};
  ClassProbMap es{Tensor({4, H, W}), Phase::es};
  const std::int64_t plane = std::int64_t(H) * W;
  std::copy(probs8.data.begin(), probs8.data.begin() + 4 * plane, ed.probs.data.begin());
  std::copy(probs8.data.begin() + 4 * plane, probs8.data.end(), es.probs.data.begin());
  return {std::move(ed), std::move(es)};
}

std::pair<SampleStack, SampleStack> mc_predict(
    const std::vector<const NetworkParams*>& models, const Tensor& ed, const Tensor& es,
    int samples_per_model, RngStream rng) {
  if (models.empty()) throw std::invalid_argument("mc_predict: need at least one model");
  if (samples_per_model < 1) {
    throw std::invalid_argument("mc_predict: need at least one sample per model");
  }
  SampleStack ed_stack, es_stack;
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (models[m]->config != models[0]->config) {
      throw std::invalid_argument("mc_predict: models disagree on configuration");
    }
    for (int s = 0; s < samples_per_model; ++s) {
      RngStream stream = rng.derive(std::uint64_t(m)).derive(std::uint64_t(s));
      Tensor logits = forward(*models[m], ed, es, Mode::mc, stream);
      Tensor probs8 = softmax_groups(logits);
      auto [pe, ps] = split_phases(probs8);
      ed_stack.samples.push_back(std::move(pe));
      es_stack.samples.push_back(std::move(ps));
      ed_stack.provenance.emplace_back(int(m), s);
      es_stack.provenance.emplace_back(int(m), s);
    }
  }
  return {std::move(ed_stack), std::move(es_stack)};
}

ClassProbMap mean_probs(const SampleStack& stack) {
  if (stack.samples.empty()) throw std::invalid_argument("mean_probs: empty stack");
  const Tensor& first = stack.samples.front().probs;
  DTensor acc(first.dims);
  for (const ClassProbMap& s : stack.samples) {
    if (!s.probs.same_shape(first)) {
      throw std::invalid_argument("mean_probs: sample shapes differ");
    }
    for (std::int64_t i = 0; i < acc.numel(); ++i) acc.data[i] += s.probs.data[i];
  }
  ClassProbMap out{Tensor(first.dims), stack.samples.front().phase};
  const double inv = 1.0 / double(stack.samples.size());
  for (std::int64_t i = 0; i < acc.numel(); ++i) out.probs.data[i] = float(acc.data[i] * inv);
  return out;
}

UncertaintyMap entropy_map(const ClassProbMap& map) {
  const Tensor& p = map.probs;
  if (p.ndim() != 3 || p.dim(0) != kNumClasses) {
    throw std::invalid_argument("entropy_map: expected [4,H,W]");
  }
  const int H = p.dim(1), W = p.dim(2);
  const std::int64_t plane = std::int64_t(H) * W;
  UncertaintyMap out{Tensor({H, W}), MapKind::entropy};
  for (std::int64_t v = 0; v < plane; ++v) {
    double h = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
      const double pc = p.data[std::size_t(c) * plane + v];
      if (pc > 0.0) h -= pc * std::log(pc);
    }
    out.values.data[std::size_t(v)] = float(h);
  }
  return out;
}

UncertaintyMap max_variance_map(const SampleStack& stack) {
  const std::size_t T = stack.samples.size();
  if (T < 2) throw std::invalid_argument("max_variance_map: need at least two samples");
  const Tensor& first = stack.samples.front().probs;
  const int H = first.dim(1), W = first.dim(2);
  const std::int64_t plane = std::int64_t(H) * W;

  // streaming mean/M2 per (class, voxel); population variance = M2/T
  DTensor mean(first.dims);
  DTensor m2(first.dims);
  std::int64_t n = 0;
  for (const ClassProbMap& s : stack.samples) {
    if (!s.probs.same_shape(first)) {
      throw std::invalid_argument("max_variance_map: sample shapes differ");
    }
    n += 1;
    for (std::int64_t i = 0; i < mean.numel(); ++i) {
      const double x = s.probs.data[i];
      const double d = x - mean.data[i];
      mean.data[i] += d / double(n);
      m2.data[i] += d * (x - mean.data[i]);
    }
  }
  UncertaintyMap out{Tensor({H, W}), MapKind::max_variance};
  for (std::int64_t v = 0; v < plane; ++v) {
    double mx = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
      mx = std::max(mx, m2.data[std::size_t(c) * plane + v] / double(T));
    }
    out.values.data[std::size_t(v)] = float(mx);
  }
  return out;
}

}  // namespace uncseg
