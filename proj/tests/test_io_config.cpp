#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "uncseg/config.hpp"
#include "uncseg/io.hpp"
#include "uncseg/rng.hpp"

using namespace uncseg;
namespace fs = std::filesystem;

namespace {

std::string temp_file(const char* name) {
  return (fs::temp_directory_path() / name).string();
}

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("uqt: f32 round trip and exact header bytes") {
  Tensor t({2, 3});
  t.data = {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f};
  const std::string path = temp_file("uncseg_io_test.uqt");
  write_uqt(path, t);

  auto bytes = slurp(path);
  REQUIRE(bytes.size() == 4 + 1 + 1 + 2 * 4 + 6 * 4);
  CHECK(bytes[0] == 'U');
  CHECK(bytes[1] == 'Q');
  CHECK(bytes[2] == 'T');
  CHECK(bytes[3] == '1');
  CHECK(bytes[4] == 0);  // f32 dtype code
  CHECK(bytes[5] == 2);  // ndim
  // dims little endian: 2 then 3
  CHECK(bytes[6] == 2);
  CHECK(bytes[7] == 0);
  CHECK(bytes[10] == 3);

  Tensor r = read_uqt_f32(path);
  CHECK(r.dims == t.dims);
  CHECK(r.data == t.data);
  fs::remove(path);
}

TEST_CASE("uqt: u8 round trip and dtype mismatch errors") {
  LabelMap m({2, 2, 2});
  m.data = {0, 1, 2, 3, 3, 2, 1, 0};
  const std::string path = temp_file("uncseg_io_u8.uqt");
  write_uqt(path, m);
  auto bytes = slurp(path);
  CHECK(bytes[4] == 1);  // u8 dtype code
  LabelMap r = read_uqt_u8(path);
  CHECK(r.dims == m.dims);
  CHECK(r.data == m.data);
  CHECK_THROWS_AS(read_uqt_f32(path), std::runtime_error);
  fs::remove(path);

  const std::string junk = temp_file("uncseg_io_junk.bin");
  std::ofstream(junk) << "not a tensor";
  CHECK_THROWS_AS(read_uqt_u8(junk), std::runtime_error);
  fs::remove(junk);
}

TEST_CASE("uqt: random tensors survive the round trip") {
  RngStream rng(3, 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> dims;
    const int nd = 1 + int(rng.uniform_int(4));
    for (int i = 0; i < nd; ++i) dims.push_back(1 + int(rng.uniform_int(6)));
    Tensor t(dims);
    for (auto& v : t.data) v = float(rng.uniform(-5.0, 5.0));
    const std::string path = temp_file("uncseg_io_rt.uqt");
    write_uqt(path, t);
    Tensor r = read_uqt_f32(path);
    CHECK(r.dims == t.dims);
    CHECK(r.data == t.data);
    fs::remove(path);
  }
}

TEST_CASE("pgm: header and linear scaling") {
  Tensor img({2, 3});
  img.data = {0.0f, 0.5f, 1.0f, -1.0f, 2.0f, 0.25f};
  const std::string path = temp_file("uncseg_io_test.pgm");
  write_pgm(path, img, 0.0f, 1.0f);
  auto bytes = slurp(path);
  const std::string header(bytes.begin(), bytes.begin() + 9);
  CHECK(header == "P5\n3 2\n25");  // "P5\n3 2\n255\n"
  const std::size_t off = bytes.size() - 6;
  CHECK(bytes[off + 0] == 0);
  CHECK(bytes[off + 1] == 128);
  CHECK(bytes[off + 2] == 255);
  CHECK(bytes[off + 3] == 0);    // clamped below
  CHECK(bytes[off + 4] == 255);  // clamped above
  CHECK(bytes[off + 5] == 64);
  fs::remove(path);
}

TEST_CASE("config: text round trip preserves every field") {
  ExperimentConfig c;
  c.seed = 987654321;
  c.out_dir = "some/dir";
  c.num_cases = 12;
  c.folds = 3;
  c.geometry.noise_sigma = 0.075;
  c.network.channels = 16;
  c.network.layer_dilations = {1, 1, 2, 2, 4, 4, 1, 1, 1, 1};
  c.network.expected_receptive_field = 33;
  c.losses = {LossKind::brier, LossKind::cross_entropy};
  c.schedule.base_lr = 0.015;
  c.schedule.total_iterations = 1000;
  c.schedule.cycle_length = 250;
  c.schedule.snapshots_to_keep = 2;
  c.batch_size = 4;
  c.patch_size = 24;
  c.include_background = true;
  c.referral_quantiles = {100, 99, 95.5, 80};

  const std::string text = config_to_text(c);
  ExperimentConfig r = parse_config_text(text, "roundtrip.ini");
  CHECK(r == c);

  const std::string path = temp_file("uncseg_cfg_rt.ini");
  write_config_file(path, c);
  CHECK(parse_config_file(path) == c);
  fs::remove(path);
}

TEST_CASE("config: malformed input reports the line number") {
  const char* text =
      "[experiment]\n"
      "seed = 5\n"
      "this line has no equals\n";
  try {
    parse_config_text(text, "bad.ini");
    FAIL("expected a parse error");
  } catch (const ConfigError& e) {
    CHECK(e.line_number == 3);
    CHECK(std::string(e.what()).find("bad.ini:3:") != std::string::npos);
  }

  CHECK_THROWS_AS(parse_config_text("[experiment]\nbogus_key = 1\n", "x.ini"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("seed = 5\n", "x.ini"), ConfigError);  // no section
  CHECK_THROWS_AS(parse_config_text("[train]\nlosses = ce,zz\n", "x.ini"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[phantom]\nnum_cases = ten\n", "x.ini"), ConfigError);

  // structurally fine but semantically invalid
  CHECK_THROWS_AS(parse_config_text("[phantom]\nnum_cases = 10\nfolds = 4\n", "x.ini"),
                  ConfigError);
}

TEST_CASE("config: comments and spacing are tolerated") {
  const char* text =
      "# full line comment\n"
      "[experiment]\n"
      "seed = 11   # trailing comment\n"
      "\n"
      "[train]\n"
      "  batch_size =   4\n";
  ExperimentConfig c = parse_config_text(text, "ok.ini");
  CHECK(c.seed == 11);
  CHECK(c.batch_size == 4);
}
