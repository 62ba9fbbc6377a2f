#include "uncseg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace uncseg {

template <typename T>
void adam_step(const std::vector<TensorT<T>*>& params,
               const std::vector<const TensorT<T>*>& grads, AdamState<T>& state,
               const AdamHyper& hyper) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  }
  if (state.m.empty()) {
    for (const TensorT<T>* p : params) {
      state.m.emplace_back(p->dims);
      state.v.emplace_back(p->dims);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state does not match parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(state.m[i])) {
      throw std::invalid_argument("adam_step: shape mismatch at parameter " +
                                  std::to_string(i));
    }
    for (const T& g : grads[i]->data) {
      if (!std::isfinite(g)) {
        throw std::runtime_error("adam_step: non-finite gradient, training diverged");
      }
    }
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(hyper.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->ptr();
    const T* g = grads[i]->ptr();
    T* m = state.m[i].ptr();
    T* v = state.v[i].ptr();
    const std::int64_t n = params[i]->numel();
    for (std::int64_t j = 0; j < n; ++j) {
      double pj = double(p[j]);
      pj -= hyper.lr * hyper.weight_decay * pj;
      const double gj = g[j];
      const double mj = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
      const double vj = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
      m[j] = T(mj);
      v[j] = T(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      p[j] = T(pj - hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps));
    }
  }
}

void ScheduleConfig::validate() const {
  if (base_lr <= 0.0) throw std::invalid_argument("schedule: base_lr must be positive");
  if (cycle_length < 1 || total_iterations < 1) {
    throw std::invalid_argument("schedule: lengths must be positive");
  }
  if (total_iterations % cycle_length != 0) {
    throw std::invalid_argument("schedule: cycle_length must divide total_iterations");
  }
  const std::int64_t cycles = total_iterations / cycle_length;
  if (snapshots_to_keep < 1 || snapshots_to_keep > cycles) {
    throw std::invalid_argument("schedule: snapshots_to_keep must be in [1, cycles]");
  }
}

double lr_at(const ScheduleConfig& schedule, std::int64_t iteration) {
  schedule.validate();
  if (iteration < 0 || iteration >= schedule.total_iterations) {
    throw std::invalid_argument("lr_at: iteration out of range");
  }
  const std::int64_t pos = iteration % schedule.cycle_length;
  const double phase = double(pos) / double(schedule.cycle_length);
  return schedule.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * phase));
}

bool snapshot_due(const ScheduleConfig& schedule, std::int64_t iteration) {
  schedule.validate();
  // `iteration` counts completed iterations, so the final boundary at
  // total_iterations is a valid query.
  if (iteration < 0 || iteration > schedule.total_iterations) {
    throw std::invalid_argument("snapshot_due: iteration out of range");
  }
  return iteration > 0 && iteration % schedule.cycle_length == 0;
}

std::vector<int> kept_snapshot_cycles(const ScheduleConfig& schedule) {
  schedule.validate();
  const int cycles = int(schedule.total_iterations / schedule.cycle_length);
  std::vector<int> kept;
  for (int c = cycles - schedule.snapshots_to_keep + 1; c <= cycles; ++c) kept.push_back(c);
  return kept;
}

template void adam_step<float>(const std::vector<TensorT<float>*>&,
                               const std::vector<const TensorT<float>*>&, AdamState<float>&,
                               const AdamHyper&);
template void adam_step<double>(const std::vector<TensorT<double>*>&,
                                const std::vector<const TensorT<double>*>&,
                                AdamState<double>&, const AdamHyper&);

}  // namespace uncseg
