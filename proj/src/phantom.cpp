#include "uncseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "uncseg/io.hpp"

namespace fs = std::filesystem;

namespace uncseg {

namespace {

constexpr double kPi = 3.14159265358979323846;

// base intensity per class id {BG, RV, Myo, LV}; blood pools bright,
// myocardium dark, in arbitrary units before bias and noise
constexpr double kBaseLevels[4] = {0.20, 0.60, 0.38, 0.90};

// Non-cardiac anatomy rendered into the background: a bright
// chest-wall-like band, a bright vessel blob and a dark lung-like
// region. These keep the 5th/95th intensity percentiles at the true
// extremes of the scale; with a flat background the brightest few
// percent of voxels would all be ventricle, the 95th percentile would
// fall below the blood intensity, and normalization would clamp every
// structure to 1 and erase the contrast between them.
struct BackgroundAnatomy {
  double ring_cx, ring_cy, ring_radius, ring_half_thickness;  // chest wall, level 0.80
  double blob_cx, blob_cy, blob_radius;                       // vessel, level 0.95
  double lung_cx, lung_cy, lung_radius;                       // lung, level 0.05

  double level_at(double x, double y, double fallback) const {
    const double lr = std::hypot(x - lung_cx, y - lung_cy);
    double level = lr <= lung_radius ? 0.05 : fallback;
    const double rr = std::hypot(x - ring_cx, y - ring_cy);
    if (std::abs(rr - ring_radius) <= ring_half_thickness) level = 0.80;
    if (std::hypot(x - blob_cx, y - blob_cy) <= blob_radius) level = 0.95;
    return level;
  }
};

double wrap_angle(double a) {
  while (a > kPi) a -= 2.0 * kPi;
  while (a < -kPi) a += 2.0 * kPi;
  return a;
}

// mid-ventricle slices widest, tapering at base and apex
double slice_profile(int s, int num_slices) {
  return 0.6 + 0.4 * std::sin(kPi * (s + 0.5) / num_slices);
}

struct CaseGeometry {
  int num_slices;
  double cx, cy;
  double lv_radius;
  double myo_thickness;
  double rv_angle;      // angular extent, radians
  double rv_thickness;
  double rv_direction;  // crescent center angle
  double contraction;
};

std::uint8_t classify_point(double x, double y, const CaseGeometry& g, double lv_r,
                            double myo_outer, double rv_outer) {
  const double dx = x - g.cx;
  const double dy = y - g.cy;
  const double r = std::sqrt(dx * dx + dy * dy);
  if (r <= lv_r) return kLeftVentricle;
  if (r <= myo_outer) return kMyocardium;
  if (r <= rv_outer &&
      std::abs(wrap_angle(std::atan2(dy, dx) - g.rv_direction)) <= g.rv_angle / 2) {
    return kRightVentricle;
  }
  return kBackground;
}

// base_levels carries the partial-volume averaged structure level per
// voxel (see generate_case); bias and noise go on top.
Tensor render_intensities(const Tensor& base_levels, RngStream& noise_rng,
                          const GeometryConfig& cfg, const double bias_coef[8]) {
  const int S = base_levels.dim(0), H = base_levels.dim(1), W = base_levels.dim(2);
  Tensor img({S, H, W});
  const double sigma = cfg.noise_sigma * (0.95 - 0.05);
  for (int s = 0; s < S; ++s) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        // two-harmonic multiplicative bias field
        const double u = double(x) / W, v = double(y) / H;
        const double bias =
            1.0 +
            bias_coef[0] * std::sin(2.0 * kPi * (bias_coef[1] * u + bias_coef[2] * v) +
                                    bias_coef[3]) +
            bias_coef[4] * std::sin(2.0 * kPi * (bias_coef[5] * u + bias_coef[6] * v) +
                                    bias_coef[7]);
        img(s, y, x) = float(base_levels(s, y, x) * bias + sigma * noise_rng.normal());
      }
    }
  }
  return img;
}

}  // namespace

void GeometryConfig::validate() const {
  if (grid < 16) throw std::invalid_argument("geometry: grid too small");
  if (spacing_mm <= 0) throw std::invalid_argument("geometry: spacing must be positive");
  if (slices_min < 1 || slices_max < slices_min) {
    throw std::invalid_argument("geometry: bad slice count range");
  }
  if (lv_radius_min <= 0 || lv_radius_max < lv_radius_min) {
    throw std::invalid_argument("geometry: bad LV radius range");
  }
  if (myo_thickness_min < 1.0 || myo_thickness_max < myo_thickness_min) {
    throw std::invalid_argument("geometry: myocardium thickness must be >= 1 voxel");
  }
  if (rv_angle_min_deg <= 0 || rv_angle_max_deg < rv_angle_min_deg ||
      rv_angle_max_deg > 360) {
    throw std::invalid_argument("geometry: bad RV angle range");
  }
  if (rv_thickness_min <= 0 || rv_thickness_max < rv_thickness_min) {
    throw std::invalid_argument("geometry: bad RV thickness range");
  }
  if (contraction_min <= 0 || contraction_max < contraction_min || contraction_max > 1.0) {
    throw std::invalid_argument("geometry: contraction factor must be in (0,1]");
  }
  if (noise_sigma < 0 || bias_amplitude < 0 || center_jitter < 0) {
    throw std::invalid_argument("geometry: noise/bias/jitter must be non-negative");
  }
  const double max_outer = lv_radius_max + myo_thickness_max + rv_thickness_max;
  if (max_outer + center_jitter + 2.0 > grid / 2.0) {
    throw std::invalid_argument("geometry: structures cannot fit the field of view");
  }
}

PhantomCase generate_case(std::uint64_t seed, const GeometryConfig& cfg) {
  cfg.validate();
  RngStream rng(seed, 0);
  RngStream geo = rng.derive(1);

  CaseGeometry g;
  g.num_slices = cfg.slices_min + int(geo.uniform_int(std::uint64_t(
                                      cfg.slices_max - cfg.slices_min + 1)));
  g.cx = cfg.grid / 2.0 + geo.uniform(-cfg.center_jitter, cfg.center_jitter);
  g.cy = cfg.grid / 2.0 + geo.uniform(-cfg.center_jitter, cfg.center_jitter);
  g.lv_radius = geo.uniform(cfg.lv_radius_min, cfg.lv_radius_max);
  g.myo_thickness = geo.uniform(cfg.myo_thickness_min, cfg.myo_thickness_max);
  g.rv_angle = geo.uniform(cfg.rv_angle_min_deg, cfg.rv_angle_max_deg) * kPi / 180.0;
  g.rv_thickness = geo.uniform(cfg.rv_thickness_min, cfg.rv_thickness_max);
  g.rv_direction = geo.uniform(0.0, 2.0 * kPi);
  g.contraction = geo.uniform(cfg.contraction_min, cfg.contraction_max);

  PhantomCase c;
  c.seed = seed;
  c.spacing[0] = cfg.spacing_mm;
  c.spacing[1] = cfg.spacing_mm;
  c.ed_labels = LabelMap({g.num_slices, cfg.grid, cfg.grid});
  c.es_labels = LabelMap({g.num_slices, cfg.grid, cfg.grid});

  double bias_coef[8];
  RngStream bias = rng.derive(2);
  bias_coef[0] = cfg.bias_amplitude * bias.uniform(0.5, 1.0);
  bias_coef[1] = bias.uniform(0.5, 1.5);
  bias_coef[2] = bias.uniform(0.5, 1.5);
  bias_coef[3] = bias.uniform(0.0, 2.0 * kPi);
  bias_coef[4] = cfg.bias_amplitude * bias.uniform(0.25, 0.5);
  bias_coef[5] = bias.uniform(1.5, 2.5);
  bias_coef[6] = bias.uniform(1.5, 2.5);
  bias_coef[7] = bias.uniform(0.0, 2.0 * kPi);

  // static background anatomy placed clear of the heart
  const double heart_reach = std::hypot(g.cx - cfg.grid / 2.0, g.cy - cfg.grid / 2.0) +
                             g.lv_radius + g.myo_thickness + g.rv_thickness;
  BackgroundAnatomy anatomy;
  RngStream feat = rng.derive(5);
  anatomy.ring_cx = cfg.grid / 2.0 + feat.uniform(-2.0, 2.0);
  anatomy.ring_cy = cfg.grid / 2.0 + feat.uniform(-2.0, 2.0);
  anatomy.ring_half_thickness = feat.uniform(1.5, 2.5);
  const double ring_min = std::max(0.40 * cfg.grid,
                                   heart_reach + anatomy.ring_half_thickness + 3.0);
  anatomy.ring_radius = feat.uniform(ring_min, ring_min + 0.05 * cfg.grid);
  anatomy.blob_radius = feat.uniform(3.0, 5.0);
  const double blob_angle = feat.uniform(0.0, 2.0 * kPi);
  const double blob_dist = heart_reach + anatomy.blob_radius + 3.0;
  anatomy.blob_cx = g.cx + blob_dist * std::cos(blob_angle);
  anatomy.blob_cy = g.cy + blob_dist * std::sin(blob_angle);
  anatomy.lung_radius = feat.uniform(0.12 * cfg.grid, 0.18 * cfg.grid);
  const double lung_angle = blob_angle + kPi + feat.uniform(-0.6, 0.6);
  const double lung_dist = heart_reach + anatomy.lung_radius + 3.0;
  anatomy.lung_cx = g.cx + lung_dist * std::cos(lung_angle);
  anatomy.lung_cy = g.cy + lung_dist * std::sin(lung_angle);

  // labels sample the exact geometry at voxel centers; the intensity
  // base level averages a 3x3 subvoxel grid, so boundary voxels carry
  // partial-volume mixtures like real scans
  Tensor ed_base({g.num_slices, cfg.grid, cfg.grid});
  Tensor es_base({g.num_slices, cfg.grid, cfg.grid});
  for (int s = 0; s < g.num_slices; ++s) {
    const double prof = slice_profile(s, g.num_slices);
    const double lv_ed = g.lv_radius * prof;
    const double myo_outer_ed = lv_ed + g.myo_thickness;
    const double rv_outer_ed = myo_outer_ed + g.rv_thickness * prof;
    // systole: ventricles contract radially, myocardial wall keeps its
    // cross-sectional area and therefore thickens
    const double lv_es = lv_ed * g.contraction;
    const double myo_outer_es =
        std::sqrt(lv_es * lv_es + myo_outer_ed * myo_outer_ed - lv_ed * lv_ed);
    const double rv_outer_es = myo_outer_es + g.rv_thickness * prof * g.contraction;

    for (int y = 0; y < cfg.grid; ++y) {
      for (int x = 0; x < cfg.grid; ++x) {
        c.ed_labels(s, y, x) =
            classify_point(x + 0.5, y + 0.5, g, lv_ed, myo_outer_ed, rv_outer_ed);
        c.es_labels(s, y, x) =
            classify_point(x + 0.5, y + 0.5, g, lv_es, myo_outer_es, rv_outer_es);
        double ed_level = 0.0, es_level = 0.0;
        for (int sy = 0; sy < 3; ++sy) {
          for (int sx = 0; sx < 3; ++sx) {
            const double px = x + (2 * sx + 1) / 6.0;
            const double py = y + (2 * sy + 1) / 6.0;
            const std::uint8_t ed_lab =
                classify_point(px, py, g, lv_ed, myo_outer_ed, rv_outer_ed);
            const std::uint8_t es_lab =
                classify_point(px, py, g, lv_es, myo_outer_es, rv_outer_es);
            ed_level += ed_lab == kBackground ? anatomy.level_at(px, py, kBaseLevels[0])
                                              : kBaseLevels[ed_lab];
            es_level += es_lab == kBackground ? anatomy.level_at(px, py, kBaseLevels[0])
                                              : kBaseLevels[es_lab];
          }
        }
        ed_base(s, y, x) = float(ed_level / 9.0);
        es_base(s, y, x) = float(es_level / 9.0);
      }
    }
  }

  RngStream ed_noise = rng.derive(3);
  RngStream es_noise = rng.derive(4);
  c.ed_image = render_intensities(ed_base, ed_noise, cfg, bias_coef);
  c.es_image = render_intensities(es_base, es_noise, cfg, bias_coef);
  return c;
}

namespace {

template <typename F>
void resample_grid(int Hi, int Wi, double ratio, int& Ho, int& Wo, F&& per_voxel) {
  Ho = std::max(1, int(std::lround(Hi / ratio)));
  Wo = std::max(1, int(std::lround(Wi / ratio)));
  for (int y = 0; y < Ho; ++y) {
    for (int x = 0; x < Wo; ++x) {
      // voxel-center mapping; exact identity at equal spacings
      const double sy = (y + 0.5) * ratio - 0.5;
      const double sx = (x + 0.5) * ratio - 0.5;
      per_voxel(y, x, sy, sx);
    }
  }
}

}  // namespace

Tensor resample_inplane(const Tensor& image, double spacing_in, double spacing_out) {
  if (spacing_in <= 0 || spacing_out <= 0) {
    throw std::invalid_argument("resample: spacings must be positive");
  }
  if (image.ndim() != 2) throw std::invalid_argument("resample: image must be [H,W]");
  const int Hi = image.dim(0), Wi = image.dim(1);
  const double ratio = spacing_out / spacing_in;
  int Ho = 0, Wo = 0;
  Ho = std::max(1, int(std::lround(Hi / ratio)));
  Wo = std::max(1, int(std::lround(Wi / ratio)));
  Tensor out({Ho, Wo});
  resample_grid(Hi, Wi, ratio, Ho, Wo, [&](int y, int x, double sy, double sx) {
    const double cy = std::min(std::max(sy, 0.0), double(Hi - 1));
    const double cx = std::min(std::max(sx, 0.0), double(Wi - 1));
    const int y0 = int(cy), x0 = int(cx);
    const int y1 = std::min(y0 + 1, Hi - 1), x1 = std::min(x0 + 1, Wi - 1);
    const double fy = cy - y0, fx = cx - x0;
    const double v = (1 - fy) * ((1 - fx) * image(y0, x0) + fx * image(y0, x1)) +
                     fy * ((1 - fx) * image(y1, x0) + fx * image(y1, x1));
    out(y, x) = float(v);
  });
  return out;
}

LabelMap resample_labels_inplane(const LabelMap& labels, double spacing_in,
                                 double spacing_out) {
  if (spacing_in <= 0 || spacing_out <= 0) {
    throw std::invalid_argument("resample: spacings must be positive");
  }
  if (labels.ndim() != 2) throw std::invalid_argument("resample: labels must be [H,W]");
  const int Hi = labels.dim(0), Wi = labels.dim(1);
  const double ratio = spacing_out / spacing_in;
  int Ho = std::max(1, int(std::lround(Hi / ratio)));
  int Wo = std::max(1, int(std::lround(Wi / ratio)));
  LabelMap out({Ho, Wo});
  resample_grid(Hi, Wi, ratio, Ho, Wo, [&](int y, int x, double sy, double sx) {
    const int ny = std::min(std::max(int(std::lround(sy)), 0), Hi - 1);
    const int nx = std::min(std::max(int(std::lround(sx)), 0), Wi - 1);
    out(y, x) = labels(ny, nx);
  });
  return out;
}

float percentile_nearest_rank(std::vector<float> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile: empty input");
  if (p < 0 || p > 100) throw std::invalid_argument("percentile: p must be in [0,100]");
  const std::size_t n = values.size();
  std::size_t rank = std::size_t(std::ceil(p / 100.0 * double(n)));
  rank = std::min(std::max<std::size_t>(rank, 1), n);
  std::nth_element(values.begin(), values.begin() + (rank - 1), values.end());
  return values[rank - 1];
}

Tensor normalize_percentile(const Tensor& image) {
  if (image.numel() < 1) throw std::invalid_argument("normalize: empty image");
  const float p5 = percentile_nearest_rank(image.data, 5.0);
  const float p95 = percentile_nearest_rank(image.data, 95.0);
  Tensor out(image.dims);
  if (p95 <= p5) {
    std::fill(out.data.begin(), out.data.end(), 0.5f);
    return out;
  }
  const float span = p95 - p5;
  for (std::int64_t i = 0; i < image.numel(); ++i) {
    out.data[i] = std::min(1.0f, std::max(0.0f, (image.data[i] - p5) / span));
  }
  return out;
}

namespace {

template <typename Arr>
Arr rot90_once(const Arr& in) {
  const int H = in.dim(0), W = in.dim(1);
  Arr out({W, H});
  for (int y = 0; y < W; ++y) {
    for (int x = 0; x < H; ++x) out(y, x) = in(x, W - 1 - y);
  }
  return out;
}

}  // namespace

Tensor rot90(const Tensor& image2d, int k) {
  if (image2d.ndim() != 2) throw std::invalid_argument("rot90: image must be [H,W]");
  if (k < 0 || k > 3) throw std::invalid_argument("rot90: k must be in {0,1,2,3}");
  Tensor out = image2d;
  for (int i = 0; i < k; ++i) out = rot90_once(out);
  return out;
}

LabelMap rot90(const LabelMap& labels2d, int k) {
  if (labels2d.ndim() != 2) throw std::invalid_argument("rot90: labels must be [H,W]");
  if (k < 0 || k > 3) throw std::invalid_argument("rot90: k must be in {0,1,2,3}");
  LabelMap out = labels2d;
  for (int i = 0; i < k; ++i) out = rot90_once(out);
  return out;
}

std::pair<Tensor, LabelMap> augment_rot90(const Tensor& image2d, const LabelMap& labels2d,
                                          int k) {
  return {rot90(image2d, k), rot90(labels2d, k)};
}

PatchSample sample_patch(const PhantomCase& c, int slice_idx, int patch, int pad_to,
                         RngStream rng) {
  if (slice_idx < 0 || slice_idx >= c.ed_image.dim(0)) {
    throw std::invalid_argument("sample_patch: slice index out of range");
  }
  const int H = c.ed_image.dim(1), W = c.ed_image.dim(2);
  if (patch < 1 || pad_to < patch || (pad_to - patch) % 2 != 0) {
    throw std::invalid_argument("sample_patch: need pad_to >= patch with even margin");
  }
  // a patch larger than the slice samples from the zero-padded slice,
  // centered; (oy, ox) is the slice origin in padded coordinates
  const int Hp = std::max(H, patch), Wp = std::max(W, patch);
  const int oy = (Hp - H) / 2, ox = (Wp - W) / 2;
  const int margin = (pad_to - patch) / 2;
  PatchSample s;
  s.top = int(rng.uniform_int(std::uint64_t(Hp - patch + 1)));
  s.left = int(rng.uniform_int(std::uint64_t(Wp - patch + 1)));

  auto crop_image = [&](const Tensor& vol) {
    Tensor out({pad_to, pad_to});
    for (int y = 0; y < pad_to; ++y) {
      const int sy = s.top - margin + y - oy;
      if (sy < 0 || sy >= H) continue;
      for (int x = 0; x < pad_to; ++x) {
        const int sx = s.left - margin + x - ox;
        if (sx < 0 || sx >= W) continue;
        out(y, x) = vol(slice_idx, sy, sx);
      }
    }
    return out;
  };
  auto crop_ref = [&](const LabelMap& vol) {
    LabelMap out({patch, patch});
    for (int y = 0; y < patch; ++y) {
      const int sy = s.top + y - oy;
      if (sy < 0 || sy >= H) continue;
      for (int x = 0; x < patch; ++x) {
        const int sx = s.left + x - ox;
        if (sx < 0 || sx >= W) continue;
        out(y, x) = vol(slice_idx, sy, sx);
      }
    }
    return out;
  };
  s.ed = crop_image(c.ed_image);
  s.es = crop_image(c.es_image);
  s.ed_ref = crop_ref(c.ed_labels);
  s.es_ref = crop_ref(c.es_labels);
  return s;
}

std::vector<FoldSplit> make_folds(int num_cases, int folds, std::uint64_t seed) {
  if (num_cases < 1 || folds < 1) throw std::invalid_argument("make_folds: bad sizes");
  if (num_cases % folds != 0) {
    throw std::invalid_argument("make_folds: fold count must divide the number of cases");
  }
  std::vector<int> perm(std::size_t(num_cases), 0);
  std::iota(perm.begin(), perm.end(), 0);
  RngStream rng(seed, 0);
  for (int i = num_cases - 1; i > 0; --i) {
    const int j = int(rng.uniform_int(std::uint64_t(i + 1)));
    std::swap(perm[std::size_t(i)], perm[std::size_t(j)]);
  }
  const int per_fold = num_cases / folds;
  std::vector<FoldSplit> out;
  for (int f = 0; f < folds; ++f) {
    FoldSplit fs;
    fs.fold_id = f;
    fs.test_ids.assign(perm.begin() + f * per_fold, perm.begin() + (f + 1) * per_fold);
    for (int i = 0; i < num_cases; ++i) {
      const int id = perm[std::size_t(i)];
      if (i < f * per_fold || i >= (f + 1) * per_fold) fs.train_ids.push_back(id);
    }
    std::sort(fs.test_ids.begin(), fs.test_ids.end());
    std::sort(fs.train_ids.begin(), fs.train_ids.end());
    out.push_back(std::move(fs));
  }
  return out;
}

void write_folds_file(const std::string& path, const std::vector<FoldSplit>& folds,
                      int num_cases) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "num_cases " << num_cases << "\n";
  for (const FoldSplit& f : folds) {
    out << "fold " << f.fold_id << " test";
    for (int id : f.test_ids) out << " " << id;
    out << "\n";
  }
}

std::vector<FoldSplit> read_folds_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string word;
  in >> word;
  int num_cases = 0;
  if (word != "num_cases" || !(in >> num_cases)) {
    throw std::runtime_error(path + ": malformed fold file");
  }
  std::vector<FoldSplit> folds;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tag, tag2;
    FoldSplit f;
    ss >> tag >> f.fold_id >> tag2;
    if (tag != "fold" || tag2 != "test") throw std::runtime_error(path + ": malformed fold line");
    int id;
    std::vector<bool> in_test(std::size_t(num_cases), false);
    while (ss >> id) {
      f.test_ids.push_back(id);
      in_test[std::size_t(id)] = true;
    }
    for (int i = 0; i < num_cases; ++i) {
      if (!in_test[std::size_t(i)]) f.train_ids.push_back(i);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

void save_case(const std::string& dir, const PhantomCase& c) {
  fs::create_directories(dir);
  write_uqt((fs::path(dir) / "ed_image.uqt").string(), c.ed_image);
  write_uqt((fs::path(dir) / "es_image.uqt").string(), c.es_image);
  write_uqt((fs::path(dir) / "ed_labels.uqt").string(), c.ed_labels);
  write_uqt((fs::path(dir) / "es_labels.uqt").string(), c.es_labels);
  std::ofstream meta(fs::path(dir) / "meta.txt");
  if (!meta) throw std::runtime_error("cannot write case metadata in " + dir);
  meta << "seed = " << c.seed << "\n";
  meta << "spacing_mm = " << c.spacing[0] << " " << c.spacing[1] << "\n";
  meta << "slices = " << c.ed_image.dim(0) << "\n";
}

PhantomCase load_case(const std::string& dir) {
  PhantomCase c;
  c.ed_image = read_uqt_f32((fs::path(dir) / "ed_image.uqt").string());
  c.es_image = read_uqt_f32((fs::path(dir) / "es_image.uqt").string());
  c.ed_labels = read_uqt_u8((fs::path(dir) / "ed_labels.uqt").string());
  c.es_labels = read_uqt_u8((fs::path(dir) / "es_labels.uqt").string());
  std::ifstream meta(fs::path(dir) / "meta.txt");
  if (meta) {
    std::string line;
    while (std::getline(meta, line)) {
      std::istringstream ss(line);
      std::string key, eq;
      ss >> key >> eq;
      if (key == "seed") ss >> c.seed;
      if (key == "spacing_mm") ss >> c.spacing[0] >> c.spacing[1];
    }
  }
  return c;
}

}  // namespace uncseg
