#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "oracles.hpp"
#include "uncseg/phantom.hpp"

using namespace uncseg;

namespace {

GeometryConfig small_geometry() {
  GeometryConfig g;
  g.grid = 64;
  g.slices_min = 4;
  g.slices_max = 6;
  g.lv_radius_min = 6;
  g.lv_radius_max = 10;
  g.myo_thickness_min = 3;
  g.myo_thickness_max = 4;
  g.rv_thickness_min = 3;
  g.rv_thickness_max = 5;
  g.center_jitter = 3;
  return g;
}

std::int64_t count_class(const LabelMap& m, int cls) {
  std::int64_t n = 0;
  for (auto v : m.data) n += v == cls;
  return n;
}

}  // namespace

TEST_CASE("generate_case: deterministic per seed") {
  GeometryConfig g = small_geometry();
  PhantomCase a = generate_case(42, g);
  PhantomCase b = generate_case(42, g);
  CHECK(a.ed_image.data == b.ed_image.data);
  CHECK(a.es_image.data == b.es_image.data);
  CHECK(a.ed_labels.data == b.ed_labels.data);
  PhantomCase c = generate_case(43, g);
  CHECK(a.ed_image.data != c.ed_image.data);
}

TEST_CASE("generate_case: labels are valid and anatomically ordered") {
  GeometryConfig g = small_geometry();
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    PhantomCase c = generate_case(seed, g);
    for (auto v : c.ed_labels.data) CHECK(v < 4);
    // all three foreground structures exist
    for (int cls = 1; cls < 4; ++cls) CHECK(count_class(c.ed_labels, cls) > 0);
    // systolic contraction shrinks the LV cavity
    CHECK(count_class(c.es_labels, kLeftVentricle) < count_class(c.ed_labels, kLeftVentricle));

    // the myocardial ring separates LV from everything else on every slice
    for (const LabelMap* vol : {&c.ed_labels, &c.es_labels}) {
      const int S = vol->dim(0), H = vol->dim(1), W = vol->dim(2);
      bool ring_ok = true;
      for (int s = 0; s < S; ++s) {
        for (int y = 0; y < H; ++y) {
          for (int x = 0; x < W; ++x) {
            if ((*vol)(s, y, x) != kLeftVentricle) continue;
            const int ny[4] = {y - 1, y + 1, y, y};
            const int nx[4] = {x, x, x - 1, x + 1};
            for (int k = 0; k < 4; ++k) {
              if (ny[k] < 0 || ny[k] >= H || nx[k] < 0 || nx[k] >= W) continue;
              const std::uint8_t nb = (*vol)(s, ny[k], nx[k]);
              ring_ok = ring_ok && (nb == kLeftVentricle || nb == kMyocardium);
            }
          }
        }
      }
      CHECK(ring_ok);
    }
  }
}

TEST_CASE("generate_case: contraction factor controls the ES/ED area ratio") {
  GeometryConfig g = small_geometry();
  g.contraction_min = g.contraction_max = 1.0;
  PhantomCase frozen = generate_case(7, g);
  CHECK(frozen.ed_labels.data == frozen.es_labels.data);

  g.contraction_min = g.contraction_max = 0.8;
  PhantomCase c = generate_case(7, g);
  const double ratio = double(count_class(c.es_labels, kLeftVentricle)) /
                       double(count_class(c.ed_labels, kLeftVentricle));
  CHECK(ratio > 0.64 * 0.9);
  CHECK(ratio < 0.64 * 1.1);
}

TEST_CASE("generate_case: rejects geometry that cannot fit") {
  GeometryConfig g = small_geometry();
  g.lv_radius_max = 40;  // larger than half the 64 grid
  CHECK_THROWS_AS(generate_case(1, g), std::invalid_argument);
}

TEST_CASE("resample_inplane: identity, downsampling and convexity") {
  RngStream rng(4, 0);
  Tensor img({20, 20});
  for (auto& v : img.data) v = float(rng.uniform(0.0, 1.0));
  Tensor same = resample_inplane(img, 1.4, 1.4);
  CHECK(same.data == img.data);

  Tensor wide({100, 100}, 0.0f);
  Tensor down = resample_inplane(wide, 0.7, 1.4);
  CHECK(down.dims == std::vector<int>{50, 50});

  Tensor constant({13, 17}, 0.37f);
  Tensor out = resample_inplane(constant, 1.1, 1.4);
  for (float v : out.data) CHECK(v == doctest::Approx(0.37f));
  // and back again: a constant survives the round trip exactly
  Tensor back = resample_inplane(out, 1.4, 1.1);
  for (float v : back.data) CHECK(v == 0.37f);
}

TEST_CASE("resample_labels_inplane: nearest neighbor keeps valid ids") {
  LabelMap m({10, 10});
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) m(y, x) = std::uint8_t((x >= 5) + 2 * (y >= 5));
  LabelMap up = resample_labels_inplane(m, 1.4, 0.7);
  CHECK(up.dims == std::vector<int>{20, 20});
  for (auto v : up.data) CHECK(v < 4);
  CHECK(up(0, 0) == m(0, 0));
  CHECK(up(19, 19) == m(9, 9));
}

TEST_CASE("normalize_percentile: nearest-rank anchors") {
  Tensor ramp({101});
  for (int i = 0; i <= 100; ++i) ramp(i) = float(i);
  Tensor out = normalize_percentile(ramp);
  // p5 = 5, p95 = 95 by nearest rank; value 50 -> 0.5
  CHECK(out(50) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(out(3) == 0.0f);    // below p5 clamps to 0
  CHECK(out(99) == 1.0f);   // above p95 clamps to 1
  for (float v : out.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  Tensor constant({4, 4}, 2.5f);
  Tensor flat = normalize_percentile(constant);
  for (float v : flat.data) CHECK(v == 0.5f);
}

TEST_CASE("percentile_nearest_rank: agrees with the sorted reference") {
  RngStream rng(6, 0);
  std::vector<float> values;
  for (int i = 0; i < 1234; ++i) values.push_back(float(rng.uniform(-10.0, 10.0)));
  for (double p : {0.0, 5.0, 33.3, 50.0, 95.0, 100.0}) {
    CHECK(percentile_nearest_rank(values, p) == oracles::percentile_reference(values, p));
  }
}

TEST_CASE("rot90: group structure and pair consistency") {
  RngStream rng(8, 0);
  Tensor img({6, 6});
  for (auto& v : img.data) v = float(rng.uniform(0.0, 1.0));
  LabelMap lab({6, 6});
  for (auto& v : lab.data) v = std::uint8_t(rng.uniform_int(4));

  CHECK(rot90(img, 0).data == img.data);
  Tensor four = rot90(rot90(rot90(rot90(img, 1), 1), 1), 1);
  CHECK(four.data == img.data);

  auto [rimg, rlab] = augment_rot90(img, lab, 1);
  // rotating the pair keeps image/label correspondence: the label under
  // a rotated pixel equals the rotated label
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) {
      CHECK(rimg(y, x) == img(x, 6 - 1 - y));
      CHECK(rlab(y, x) == lab(x, 6 - 1 - y));
    }
  }
}

TEST_CASE("sample_patch: shapes, determinism and alignment") {
  GeometryConfig g = small_geometry();
  PhantomCase c = generate_case(3, g);
  const int patch = 16, pad_to = 32;
  PatchSample a = sample_patch(c, 1, patch, pad_to, RngStream(9, 1));
  PatchSample b = sample_patch(c, 1, patch, pad_to, RngStream(9, 1));
  CHECK(a.top == b.top);
  CHECK(a.ed.data == b.ed.data);
  CHECK(a.ed.dims == std::vector<int>{32, 32});
  CHECK(a.ed_ref.dims == std::vector<int>{16, 16});

  // reference equals the slice crop at the patch location, and the
  // patch body sits centered inside the padded window
  const int margin = (pad_to - patch) / 2;
  for (int y = 0; y < patch; ++y) {
    for (int x = 0; x < patch; ++x) {
      CHECK(a.ed_ref(y, x) == c.ed_labels(1, a.top + y, a.left + x));
      CHECK(a.ed(y + margin, x + margin) == c.ed_image(1, a.top + y, a.left + x));
    }
  }

  // a patch larger than the slice works on the zero-padded slice
  PatchSample big = sample_patch(c, 0, 100, 120, RngStream(0, 0));
  CHECK(big.ed.dims == std::vector<int>{120, 120});
  CHECK(big.ed_ref.dims == std::vector<int>{100, 100});
  const int off = (100 - 64) / 2;
  CHECK(big.ed_ref(0, 0) == 0);  // padded corner is background
  bool center_matches = true;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      center_matches = center_matches && big.ed_ref(off + y, off + x) == c.ed_labels(0, y, x);
    }
  }
  CHECK(center_matches);
  CHECK_THROWS_AS(sample_patch(c, 0, 16, 17, RngStream(0, 0)), std::invalid_argument);
}

TEST_CASE("make_folds: disjoint covering splits") {
  auto folds = make_folds(100, 4, 77);
  REQUIRE(folds.size() == 4);
  std::set<int> seen;
  for (const FoldSplit& f : folds) {
    CHECK(f.train_ids.size() == 75);
    CHECK(f.test_ids.size() == 25);
    for (int id : f.test_ids) {
      CHECK(seen.count(id) == 0);
      seen.insert(id);
    }
    std::set<int> train(f.train_ids.begin(), f.train_ids.end());
    for (int id : f.test_ids) CHECK(train.count(id) == 0);
  }
  CHECK(seen.size() == 100);

  auto small = make_folds(8, 4, 1);
  for (const auto& f : small) CHECK(f.test_ids.size() == 2);
  CHECK_THROWS_AS(make_folds(10, 4, 1), std::invalid_argument);
}

TEST_CASE("folds file: write and read round trip") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "uncseg_folds_test.txt").string();
  auto folds = make_folds(12, 3, 5);
  write_folds_file(path, folds, 12);
  auto loaded = read_folds_file(path);
  REQUIRE(loaded.size() == folds.size());
  for (std::size_t i = 0; i < folds.size(); ++i) {
    CHECK(loaded[i].test_ids == folds[i].test_ids);
    CHECK(loaded[i].train_ids == folds[i].train_ids);
  }
  fs::remove(path);
}

TEST_CASE("case io: save and load round trip") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "uncseg_case_test").string();
  fs::remove_all(dir);
  PhantomCase c = generate_case(9, small_geometry());
  save_case(dir, c);
  PhantomCase r = load_case(dir);
  CHECK(r.ed_image.data == c.ed_image.data);
  CHECK(r.es_labels.data == c.es_labels.data);
  CHECK(r.seed == c.seed);
  CHECK(r.spacing[0] == doctest::Approx(c.spacing[0]));
  fs::remove_all(dir);
}
