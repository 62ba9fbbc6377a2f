#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "uncseg/gradcheck.hpp"
#include "uncseg/network.hpp"

using namespace uncseg;

namespace {

// small 10-layer plan used where the full-size default would be slow
NetworkConfig tiny_config() {
  NetworkConfig c;
  c.layer_kernels = {3, 3, 3, 3, 1, 1, 1, 1, 1, 1};
  c.layer_dilations = {1, 1, 2, 1, 1, 1, 1, 1, 1, 1};
  c.channels = 6;
  c.dropout_rate = 0.1;
  return c;  // receptive field 11
}

Tensor random_image(int h, int w, RngStream& rng) {
  Tensor t({h, w});
  for (auto& v : t.data) v = float(rng.uniform(0.0, 1.0));
  return t;
}

}  // namespace

TEST_CASE("receptive_field: default plan spans 131 voxels") {
  CHECK(NetworkConfig::defaults().receptive_field() == 131);
  NetworkConfig all_one = NetworkConfig::defaults();
  all_one.layer_dilations = {1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  all_one.expected_receptive_field = 0;
  CHECK(all_one.receptive_field() == 17);  // eight 3x3 layers, two 1x1
  CHECK(receptive_field({1}, {1}) == 1);
  CHECK(receptive_field({3}, {4}) == 9);
}

TEST_CASE("build_network: layer plan and validation") {
  NetworkParams net = build_network<float>(NetworkConfig::defaults(), RngStream(1, 0));
  REQUIRE(net.layers.size() == 10);
  CHECK(net.layers[0].weight.dims == std::vector<int>{32, 2, 3, 3});
  CHECK(net.layers[8].weight.dims == std::vector<int>{32, 32, 1, 1});
  CHECK(net.layers[9].weight.dims == std::vector<int>{8, 32, 1, 1});
  CHECK(net.layers[9].has_bn == false);
  for (int i = 0; i < 9; ++i) CHECK(net.layers[std::size_t(i)].has_bn);

  NetworkParams other = build_network<float>(NetworkConfig::defaults(), RngStream(2, 0));
  CHECK(other.layers[0].weight.dims == net.layers[0].weight.dims);
  CHECK(other.layers[0].weight.data != net.layers[0].weight.data);

  NetworkConfig bad = NetworkConfig::defaults();
  bad.expected_receptive_field = 99;
  CHECK_THROWS_AS(build_network<float>(bad, RngStream(1, 0)), std::invalid_argument);
  NetworkConfig nine = NetworkConfig::defaults();
  nine.layer_kernels.pop_back();
  CHECK_THROWS_AS(build_network<float>(nine, RngStream(1, 0)), std::invalid_argument);
}

TEST_CASE("pad_input: sizes and interior placement") {
  RngStream rng(4, 0);
  Tensor img = random_image(151, 151, rng);
  Tensor padded = pad_input(img, 65);
  REQUIRE(padded.dims == std::vector<int>{281, 281});
  CHECK(padded(0, 0) == 0.0f);
  CHECK(padded(10, 280) == 0.0f);
  bool interior_ok = true;
  for (int y = 0; y < 151 && interior_ok; ++y) {
    for (int x = 0; x < 151; ++x) {
      if (padded(y + 65, x + 65) != img(y, x)) {
        interior_ok = false;
        break;
      }
    }
  }
  CHECK(interior_ok);
  Tensor same = pad_input(img, 0);
  CHECK(same.data == img.data);
}

TEST_CASE("forward: 281 input yields 151 output on the default network") {
  NetworkParams net = build_network<float>(NetworkConfig::defaults(), RngStream(3, 0));
  RngStream rng(8, 0);
  Tensor ed = random_image(281, 281, rng);
  Tensor es = random_image(281, 281, rng);
  Tensor logits = forward(net, ed, es, Mode::eval, RngStream(0, 0));
  CHECK(logits.dims == std::vector<int>{8, 151, 151});
}

TEST_CASE("forward: eval is deterministic, mc is stream-keyed") {
  NetworkConfig cfg = tiny_config();
  NetworkParams net = build_network<float>(cfg, RngStream(5, 0));
  RngStream rng(6, 0);
  Tensor ed = random_image(24, 24, rng);
  Tensor es = random_image(24, 24, rng);

  Tensor a = forward(net, ed, es, Mode::eval, RngStream(1, 1));
  Tensor b = forward(net, ed, es, Mode::eval, RngStream(2, 2));
  CHECK(a.data == b.data);

  Tensor m1 = forward(net, ed, es, Mode::mc, RngStream(10, 0));
  Tensor m2 = forward(net, ed, es, Mode::mc, RngStream(10, 0));
  Tensor m3 = forward(net, ed, es, Mode::mc, RngStream(11, 0));
  CHECK(m1.data == m2.data);
  CHECK(m1.data != m3.data);

  Tensor small = random_image(cfg.receptive_field() - 1, cfg.receptive_field() - 1, rng);
  CHECK_THROWS_AS(forward(net, small, small, Mode::eval, RngStream(0, 0)),
                  std::invalid_argument);
}

TEST_CASE("forward: output size tracks the receptive field for several plans") {
  RngStream rng(9, 0);
  for (int variant = 0; variant < 3; ++variant) {
    NetworkConfig cfg = tiny_config();
    if (variant == 1) cfg.layer_dilations = {1, 2, 2, 1, 1, 1, 1, 1, 1, 1};
    if (variant == 2) cfg.layer_kernels = {3, 3, 3, 3, 3, 1, 1, 1, 1, 1};
    NetworkParams net = build_network<float>(cfg, RngStream(7, 0));
    const int rf = cfg.receptive_field();
    const int in_size = rf + 9;
    Tensor ed = random_image(in_size, in_size, rng);
    Tensor es = random_image(in_size, in_size, rng);
    Tensor logits = forward(net, ed, es, Mode::eval, RngStream(0, 0));
    CHECK(logits.dim(1) == in_size - (rf - 1));
    CHECK(logits.dim(2) == in_size - (rf - 1));
  }
}

TEST_CASE("forward: influence never leaves the analytic receptive field") {
  NetworkConfig cfg = tiny_config();
  NetworkParams net = build_network<float>(cfg, RngStream(12, 0));
  const int rf = cfg.receptive_field();
  const int half = (rf - 1) / 2;
  RngStream rng(13, 0);
  const int in_size = rf + 14;
  Tensor ed = random_image(in_size, in_size, rng);
  Tensor es = random_image(in_size, in_size, rng);
  Tensor base = forward(net, ed, es, Mode::eval, RngStream(0, 0));

  // output voxel v reads the input window centered at v + half
  const int vy = 7, vx = 9;
  RngStream pick(14, 0);
  for (int probe = 0; probe < 12; ++probe) {
    int py = int(pick.uniform_int(std::uint64_t(in_size)));
    int px = int(pick.uniform_int(std::uint64_t(in_size)));
    const bool inside =
        std::abs(py - (vy + half)) <= half && std::abs(px - (vx + half)) <= half;
    if (inside) continue;  // only outside probes must leave v untouched
    Tensor ed2 = ed;
    ed2(py, px) += 10.0f;
    Tensor out = forward(net, ed2, es, Mode::eval, RngStream(0, 0));
    for (int c = 0; c < 8; ++c) CHECK(out(c, vy, vx) == base(c, vy, vx));
  }
}

TEST_CASE("backward: end-to-end spot checks on a small plan") {
  NetworkConfig cfg = tiny_config();
  GradCheckResult r = run_end_to_end_check(cfg, cfg.receptive_field() + 5, 25, 99);
  INFO("worst rel err ", r.worst);
  CHECK(r.pass);
}

TEST_CASE("checkpoint: save and load round-trips bytes and config") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "uncseg_ckpt_test").string();
  fs::remove_all(dir);
  NetworkConfig cfg = tiny_config();
  NetworkParams net = build_network<float>(cfg, RngStream(21, 0));
  net.layers[2].bn.running_mean(3) = 0.25f;  // make state non-trivial
  save_checkpoint(dir, net, 1234);
  Checkpoint ck = load_checkpoint(dir);
  CHECK(ck.iteration == 1234);
  CHECK(ck.params.config == cfg);
  REQUIRE(ck.params.layers.size() == net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    CHECK(ck.params.layers[i].weight.data == net.layers[i].weight.data);
    CHECK(ck.params.layers[i].bias.data == net.layers[i].bias.data);
    if (net.layers[i].has_bn) {
      CHECK(ck.params.layers[i].bn.running_mean.data == net.layers[i].bn.running_mean.data);
      CHECK(ck.params.layers[i].bn.running_var.data == net.layers[i].bn.running_var.data);
    }
  }
  fs::remove_all(dir);
}
