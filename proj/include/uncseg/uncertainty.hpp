#pragma once

#include <utility>
#include <vector>

#include "uncseg/network.hpp"
#include "uncseg/tensor.hpp"

namespace uncseg {

enum class Phase { ed, es };

// Per-voxel 4-class probability field for one cardiac phase.
struct ClassProbMap {
  Tensor probs;  // [4,H,W]
  Phase phase = Phase::ed;
};

// T stochastic forward-pass probability maps from MC dropout.
struct SampleStack {
  std::vector<ClassProbMap> samples;
  // (model index, sample index) per entry
  std::vector<std::pair<int, int>> provenance;
};

enum class MapKind { entropy, max_variance };

struct UncertaintyMap {
  Tensor values;  // [H,W]
  MapKind kind = MapKind::entropy;
};

const char* map_kind_name(MapKind k);  // "emap" / "umap"

// Split an [8,H,W] two-group probability tensor into per-phase maps.
std::pair<ClassProbMap, ClassProbMap> split_phases(const Tensor& probs8);

// Dropout-enabled sampling: samples_per_model stochastic passes per
// model over the padded (ed, es) slice pair; per-sample streams are
// keyed by (model, sample) so ordering cannot change the stack.
std::pair<SampleStack, SampleStack> mc_predict(
    const std::vector<const NetworkParams*>& models, const Tensor& ed, const Tensor& es,
    int samples_per_model, RngStream rng);

// Voxelwise arithmetic mean of the stack.
ClassProbMap mean_probs(const SampleStack& stack);

// -sum_c p_c ln p_c per voxel, 0 ln 0 = 0. Bounded by ln 4.
UncertaintyMap entropy_map(const ClassProbMap& probs);

// Per voxel: population variance across samples per class, maximum
// over the four classes. Bounded by 0.25.
UncertaintyMap max_variance_map(const SampleStack& stack);

}  // namespace uncseg
