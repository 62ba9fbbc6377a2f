#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "uncseg/uncertainty.hpp"

using namespace uncseg;

namespace {

ClassProbMap normalized_map(int h, int w, RngStream& rng, Phase phase = Phase::ed) {
  ClassProbMap m{Tensor({4, h, w}), phase};
  for (int v = 0; v < h * w; ++v) {
    double e[4];
    double sum = 0.0;
    for (int c = 0; c < 4; ++c) {
      e[c] = -std::log(1.0 - rng.next_double());
      sum += e[c];
    }
    for (int c = 0; c < 4; ++c) m.probs.data[std::size_t(c) * h * w + v] = float(e[c] / sum);
  }
  return m;
}

SampleStack stack_of(std::vector<ClassProbMap> samples) {
  SampleStack s;
  for (std::size_t i = 0; i < samples.size(); ++i) s.provenance.emplace_back(0, int(i));
  s.samples = std::move(samples);
  return s;
}

ClassProbMap corner_map(int hot) {
  ClassProbMap m{Tensor({4, 1, 1}), Phase::ed};
  m.probs(hot, 0, 0) = 1.0f;
  return m;
}

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.layer_kernels = {3, 3, 1, 1, 1, 1, 1, 1, 1, 1};
  c.layer_dilations = {1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  c.channels = 4;
  c.dropout_rate = 0.1;
  return c;  // receptive field 5
}

}  // namespace

TEST_CASE("mean_probs: anchors and normalization") {
  ClassProbMap a = corner_map(0);
  CHECK(mean_probs(stack_of({a, a, a})).probs.data == a.probs.data);

  ClassProbMap b = corner_map(1);
  ClassProbMap m = mean_probs(stack_of({a, b}));
  CHECK(m.probs(0, 0, 0) == doctest::Approx(0.5f));
  CHECK(m.probs(1, 0, 0) == doctest::Approx(0.5f));
  CHECK(m.probs(2, 0, 0) == doctest::Approx(0.0f));

  RngStream rng(4, 0);
  std::vector<ClassProbMap> samples;
  for (int i = 0; i < 7; ++i) samples.push_back(normalized_map(5, 5, rng));
  ClassProbMap mm = mean_probs(stack_of(samples));
  for (int v = 0; v < 25; ++v) {
    double s = 0.0;
    for (int c = 0; c < 4; ++c) s += mm.probs.data[std::size_t(c) * 25 + v];
    CHECK(std::abs(s - 1.0) < 1e-5);
  }
}

TEST_CASE("entropy_map: anchors, bounds, permutation invariance") {
  ClassProbMap uniform{Tensor({4, 1, 1}, 0.25f), Phase::ed};
  CHECK(double(entropy_map(uniform).values(0, 0)) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-6));

  CHECK(entropy_map(corner_map(2)).values(0, 0) == 0.0f);  // exactly zero

  ClassProbMap half{Tensor({4, 1, 1}), Phase::ed};
  half.probs.data = {0.5f, 0.5f, 0.0f, 0.0f};
  CHECK(double(entropy_map(half).values(0, 0)) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));

  RngStream rng(5, 0);
  ClassProbMap m = normalized_map(6, 6, rng);
  UncertaintyMap h = entropy_map(m);
  ClassProbMap permuted{Tensor({4, 6, 6}), Phase::ed};
  const int perm[4] = {3, 2, 0, 1};
  for (int c = 0; c < 4; ++c) {
    for (int v = 0; v < 36; ++v) {
      permuted.probs.data[std::size_t(perm[c]) * 36 + v] = m.probs.data[std::size_t(c) * 36 + v];
    }
  }
  UncertaintyMap h2 = entropy_map(permuted);
  for (std::int64_t i = 0; i < h.values.numel(); ++i) {
    CHECK(h2.values.data[std::size_t(i)] == doctest::Approx(h.values.data[std::size_t(i)]));
  }
  for (float v : h.values.data) {
    CHECK(v >= 0.0f);
    CHECK(double(v) <= std::log(4.0) + 1e-6);
  }
}

TEST_CASE("max_variance_map: anchors and the two-pass oracle") {
  ClassProbMap a = corner_map(0);
  SampleStack same = stack_of({a, a, a, a});
  UncertaintyMap zero = max_variance_map(same);
  CHECK(zero.values(0, 0) == 0.0f);  // exactly zero for identical samples

  SampleStack flip = stack_of({corner_map(0), corner_map(1)});
  CHECK(double(max_variance_map(flip).values(0, 0)) == doctest::Approx(0.25).epsilon(1e-7));

  RngStream rng(6, 0);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<ClassProbMap> samples;
    const int T = 2 + int(rng.uniform_int(9));
    std::vector<Tensor> raw;
    for (int t = 0; t < T; ++t) {
      samples.push_back(normalized_map(4, 3, rng));
      raw.push_back(samples.back().probs);
    }
    UncertaintyMap got = max_variance_map(stack_of(samples));
    Tensor want = oracles::max_variance_reference(raw);
    for (std::int64_t i = 0; i < got.values.numel(); ++i) {
      CHECK(std::abs(double(got.values.data[std::size_t(i)]) -
                     double(want.data[std::size_t(i)])) < 1e-6);
    }
    // max over classes dominates the mean over classes
    for (std::int64_t v = 0; v < 12; ++v) {
      double mean_var = 0.0;
      for (int c = 0; c < 4; ++c) {
        double mu = 0.0;
        for (const Tensor& s : raw) mu += s.data[std::size_t(c) * 12 + v];
        mu /= T;
        double acc = 0.0;
        for (const Tensor& s : raw) {
          const double d = s.data[std::size_t(c) * 12 + v] - mu;
          acc += d * d;
        }
        mean_var += acc / T;
      }
      mean_var /= 4.0;
      CHECK(double(got.values.data[std::size_t(v)]) >= mean_var - 1e-9);
    }
  }
  CHECK_THROWS_AS(max_variance_map(stack_of({a})), std::invalid_argument);
}

TEST_CASE("uncertainty bounds hold on random stacks") {
  RngStream rng(7, 0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ClassProbMap> samples;
    const int T = 2 + int(rng.uniform_int(6));
    for (int t = 0; t < T; ++t) samples.push_back(normalized_map(3, 3, rng));
    SampleStack st = stack_of(samples);
    for (float v : max_variance_map(st).values.data) {
      CHECK(v >= 0.0f);
      CHECK(double(v) <= 0.25 + 1e-6);
    }
    for (float v : entropy_map(mean_probs(st)).values.data) {
      CHECK(v >= 0.0f);
      CHECK(double(v) <= std::log(4.0) + 1e-6);
    }
  }
}

TEST_CASE("mc_predict: stack size, determinism, dropout-free reduction") {
  NetworkConfig cfg = tiny_config();
  std::vector<NetworkParams> models;
  for (int m = 0; m < 6; ++m) {
    models.push_back(build_network<float>(cfg, RngStream(100 + std::uint64_t(m), 0)));
  }
  std::vector<const NetworkParams*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);

  RngStream rng(9, 0);
  Tensor ed({12, 12}), es({12, 12});
  for (auto& v : ed.data) v = float(rng.uniform(0.0, 1.0));
  for (auto& v : es.data) v = float(rng.uniform(0.0, 1.0));

  auto [ed_stack, es_stack] = mc_predict(ptrs, ed, es, 10, RngStream(50, 0));
  CHECK(ed_stack.samples.size() == 60);  // six models, ten samples each
  CHECK(es_stack.samples.size() == 60);
  CHECK(ed_stack.provenance.front() == std::pair<int, int>{0, 0});
  CHECK(ed_stack.provenance.back() == std::pair<int, int>{5, 9});

  auto [ed2, es2] = mc_predict(ptrs, ed, es, 10, RngStream(50, 0));
  for (std::size_t i = 0; i < ed_stack.samples.size(); ++i) {
    CHECK(ed_stack.samples[i].probs.data == ed2.samples[i].probs.data);
  }

  // dropout rate 0 and one sample equals the deterministic forward pass
  NetworkConfig nodrop = cfg;
  nodrop.dropout_rate = 0.0;
  NetworkParams plain = build_network<float>(nodrop, RngStream(100, 0));
  auto [one_ed, one_es] = mc_predict({&plain}, ed, es, 1, RngStream(51, 0));
  Tensor probs8 = softmax_groups(forward(plain, ed, es, Mode::eval, RngStream(0, 0)));
  auto [pe, ps] = split_phases(probs8);
  CHECK(one_ed.samples[0].probs.data == pe.probs.data);
  CHECK(one_es.samples[0].probs.data == ps.probs.data);
}
