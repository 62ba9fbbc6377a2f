#pragma once

#include <cstdint>
#include <vector>

#include "uncseg/tensor.hpp"

namespace uncseg {

struct AdamHyper {
  double lr = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled
};

template <typename T>
struct AdamState {
  std::vector<TensorT<T>> m;
  std::vector<TensorT<T>> v;
  std::int64_t step = 0;
};

// Bias-corrected Adam update over a parameter list, with decoupled
// weight decay applied before the Adam delta. Throws on non-finite
// gradients (training divergence).
template <typename T>
void adam_step(const std::vector<TensorT<T>*>& params,
               const std::vector<const TensorT<T>*>& grads, AdamState<T>& state,
               const AdamHyper& hyper);

// Cyclic schedule for snapshot ensembles: cosine decay from base_lr
// towards 0 inside each cycle, reset to base_lr at every cycle start.
struct ScheduleConfig {
  double base_lr = 0.02;
  std::int64_t cycle_length = 500;
  std::int64_t total_iterations = 3000;
  int snapshots_to_keep = 3;

  void validate() const;
  bool operator==(const ScheduleConfig&) const = default;
};

double lr_at(const ScheduleConfig& schedule, std::int64_t iteration);

// True exactly at cycle boundaries, counting completed iterations.
bool snapshot_due(const ScheduleConfig& schedule, std::int64_t iteration);

// Cycle indices (1-based) whose snapshots form the ensemble: the last
// snapshots_to_keep of the run.
std::vector<int> kept_snapshot_cycles(const ScheduleConfig& schedule);

}  // namespace uncseg
