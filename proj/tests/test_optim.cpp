#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "uncseg/optim.hpp"
#include "uncseg/rng.hpp"

using namespace uncseg;

TEST_CASE("adam: zero gradient with zero decay leaves parameters alone") {
  TensorT<double> p({3});
  p.data = {1.0, -2.0, 0.5};
  TensorT<double> g({3});
  AdamState<double> state;
  AdamHyper hyper;
  hyper.weight_decay = 0.0;
  adam_step<double>({&p}, {&g}, state, hyper);
  CHECK(p.data == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(state.step == 1);
}

TEST_CASE("adam: first step moves by about lr in the gradient's direction") {
  for (double g0 : {0.003, -1.7, 40.0}) {
    TensorT<double> p({1});
    p.data = {0.25};
    TensorT<double> g({1});
    g.data = {g0};
    AdamState<double> state;
    AdamHyper hyper;
    hyper.lr = 0.02;
    hyper.weight_decay = 0.0;
    adam_step<double>({&p}, {&g}, state, hyper);
    const double step = 0.25 - p.data[0];
    CHECK(step * g0 > 0.0);  // same sign as the gradient
    CHECK(std::abs(step) == doctest::Approx(0.02).epsilon(1e-4));
  }
}

TEST_CASE("adam: 100-step trajectory matches an independent reference") {
  // random diagonal quadratic: f(x) = 0.5 sum a_i (x_i - b_i)^2
  RngStream rng(55, 0);
  const int n = 24;
  std::vector<double> a(n), b(n), x0(n);
  for (int i = 0; i < n; ++i) {
    a[std::size_t(i)] = rng.uniform(0.2, 3.0);
    b[std::size_t(i)] = rng.uniform(-2.0, 2.0);
    x0[std::size_t(i)] = rng.uniform(-2.0, 2.0);
  }

  TensorT<double> p({n});
  p.data = x0;
  AdamState<double> state;
  AdamHyper hyper;
  hyper.lr = 0.05;
  hyper.weight_decay = 1e-3;

  oracles::ReferenceAdam ref;
  ref.lr = hyper.lr;
  ref.beta1 = hyper.beta1;
  ref.beta2 = hyper.beta2;
  ref.eps = hyper.eps;
  ref.weight_decay = hyper.weight_decay;
  std::vector<double> theta = x0;

  for (int step = 0; step < 100; ++step) {
    TensorT<double> g({n});
    std::vector<double> gr(std::size_t(n), 0.0);
    for (int i = 0; i < n; ++i) {
      g.data[std::size_t(i)] = a[std::size_t(i)] * (p.data[std::size_t(i)] - b[std::size_t(i)]);
      gr[std::size_t(i)] = a[std::size_t(i)] * (theta[std::size_t(i)] - b[std::size_t(i)]);
    }
    adam_step<double>({&p}, {&g}, state, hyper);
    ref.update(theta, gr);
    for (int i = 0; i < n; ++i) {
      CHECK(std::abs(p.data[std::size_t(i)] - theta[std::size_t(i)]) < 1e-6);
    }
  }
}

TEST_CASE("adam: pure weight decay contracts the parameter norm") {
  TensorT<float> p({4});
  p.data = {1.0f, -1.0f, 2.0f, -0.5f};
  TensorT<float> g({4});
  AdamState<float> state;
  AdamHyper hyper;
  hyper.weight_decay = 1e-2;
  double prev = 1e9;
  for (int step = 0; step < 50; ++step) {
    adam_step<float>({&p}, {&g}, state, hyper);
    double norm = 0.0;
    for (float v : p.data) norm += double(v) * v;
    CHECK(norm < prev);
    prev = norm;
  }
}

TEST_CASE("adam: non-finite gradients are a training divergence error") {
  TensorT<float> p({2}, 1.0f);
  TensorT<float> g({2});
  g(0) = std::nanf("");
  AdamState<float> state;
  CHECK_THROWS_AS(adam_step<float>({&p}, {&g}, state, AdamHyper{}), std::runtime_error);
}

TEST_CASE("lr schedule: resets to the base rate at every cycle start") {
  ScheduleConfig s;
  s.base_lr = 0.02;
  s.cycle_length = 10000;
  s.total_iterations = 150000;
  s.snapshots_to_keep = 6;
  CHECK(lr_at(s, 0) == doctest::Approx(0.02));
  CHECK(lr_at(s, 10000) == doctest::Approx(0.02));
  CHECK(lr_at(s, 5000) == doctest::Approx(0.01));
  // periodic with the cycle length, base value at every cycle start
  for (int c = 0; c < 15; ++c) {
    CHECK(lr_at(s, std::int64_t(c) * 10000) == doctest::Approx(0.02));
    CHECK(lr_at(s, std::int64_t(c) * 10000 + 777) == doctest::Approx(lr_at(s, 777)));
  }
  for (int i = 1; i < 10000; i += 997) CHECK(lr_at(s, i) < lr_at(s, i - 1));
  CHECK(lr_at(s, 9999) > 0.0);
  CHECK_THROWS_AS(lr_at(s, 150000), std::invalid_argument);
}

TEST_CASE("snapshots: due exactly at cycle boundaries, ensemble keeps the tail") {
  ScheduleConfig s;
  s.cycle_length = 10000;
  s.total_iterations = 150000;
  s.snapshots_to_keep = 6;
  CHECK(snapshot_due(s, 10000));
  CHECK_FALSE(snapshot_due(s, 9999));
  CHECK_FALSE(snapshot_due(s, 0));
  CHECK(snapshot_due(s, 150000));
  CHECK(kept_snapshot_cycles(s) == std::vector<int>{10, 11, 12, 13, 14, 15});

  ScheduleConfig desk;  // the small-run defaults
  CHECK(desk.total_iterations == 3000);
  CHECK(desk.cycle_length == 500);
  CHECK(kept_snapshot_cycles(desk) == std::vector<int>{4, 5, 6});

  ScheduleConfig bad = desk;
  bad.cycle_length = 700;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
