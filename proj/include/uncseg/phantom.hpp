#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uncseg/rng.hpp"
#include "uncseg/tensor.hpp"

namespace uncseg {

// Ranges for the randomized cardiac-like geometry, in voxels of the
// generated grid. Per slice the left ventricle is a disk, the
// myocardium the annulus around it, and the right ventricle a crescent
// abutting the myocardium over a limited angular sector.
struct GeometryConfig {
  int grid = 96;
  double spacing_mm = 1.4;
  int slices_min = 6;
  int slices_max = 10;
  double lv_radius_min = 8.0;
  double lv_radius_max = 16.0;
  double myo_thickness_min = 3.0;
  double myo_thickness_max = 6.0;
  double rv_angle_min_deg = 90.0;
  double rv_angle_max_deg = 180.0;
  double rv_thickness_min = 4.0;
  double rv_thickness_max = 8.0;
  double contraction_min = 0.75;
  double contraction_max = 0.90;
  double center_jitter = 6.0;
  double noise_sigma = 0.05;     // fraction of the clean dynamic range
  double bias_amplitude = 0.10;  // multiplicative bias field strength

  void validate() const;
  bool operator==(const GeometryConfig&) const = default;
};

struct PhantomCase {
  Tensor ed_image;    // [S,H,W]
  Tensor es_image;    // [S,H,W]
  LabelMap ed_labels; // [S,H,W]
  LabelMap es_labels; // [S,H,W]
  double spacing[2] = {1.4, 1.4};
  std::uint64_t seed = 0;
};

// Deterministic per seed. ES geometry is the ED geometry under radial
// contraction of the ventricles, with an (area preserving) thickened
// myocardial wall. Labels are the exact geometry; intensities are
// structure base levels under a smooth multiplicative bias field plus
// Gaussian noise.
PhantomCase generate_case(std::uint64_t seed, const GeometryConfig& geometry);

// Bilinear resampling of a [H,W] intensity slice between isotropic
// in-plane spacings; output dims = round(dim * spacing_in/spacing_out).
Tensor resample_inplane(const Tensor& image, double spacing_in, double spacing_out = 1.4);

// Nearest-neighbor counterpart for label slices.
LabelMap resample_labels_inplane(const LabelMap& labels, double spacing_in,
                                 double spacing_out = 1.4);

// Nearest-rank percentile of the values (p in [0,100]).
float percentile_nearest_rank(std::vector<float> values, double p);

// x -> clamp((x - p5) / (p95 - p5), 0, 1); a constant image maps to 0.5.
Tensor normalize_percentile(const Tensor& image);

Tensor rot90(const Tensor& image2d, int k);
LabelMap rot90(const LabelMap& labels2d, int k);

// Rotate an image/label pair by k quarter turns.
std::pair<Tensor, LabelMap> augment_rot90(const Tensor& image2d, const LabelMap& labels2d,
                                          int k);

struct PatchSample {
  Tensor ed;        // [pad_to, pad_to]
  Tensor es;        // [pad_to, pad_to]
  LabelMap ed_ref;  // [patch, patch]
  LabelMap es_ref;  // [patch, patch]
  int top = 0, left = 0;
};

// Random patch from one slice. The reference covers patch x patch
// voxels; the image windows add (pad_to - patch)/2 voxels of context on
// every side, taken from the slice where it exists and zero beyond its
// borders, so they line up with the network's valid output.
PatchSample sample_patch(const PhantomCase& c, int slice_idx, int patch, int pad_to,
                         RngStream rng);

struct FoldSplit {
  int fold_id = 0;
  std::vector<int> train_ids;
  std::vector<int> test_ids;
};

// Seeded permutation split into `folds` disjoint test sets.
std::vector<FoldSplit> make_folds(int num_cases, int folds, std::uint64_t seed);

void write_folds_file(const std::string& path, const std::vector<FoldSplit>& folds,
                      int num_cases);
std::vector<FoldSplit> read_folds_file(const std::string& path);

void save_case(const std::string& dir, const PhantomCase& c);
PhantomCase load_case(const std::string& dir);

}  // namespace uncseg
