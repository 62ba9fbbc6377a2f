#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "uncseg/network.hpp"
#include "uncseg/tensor.hpp"

namespace uncseg {

// Central finite differences of a scalar function with respect to the
// entries of x, evaluated at 64-bit precision. The function is assumed
// to read x by reference.
DTensor fd_gradient(DTensor& x, const std::function<double()>& f, double h = 1e-5);

// Largest elementwise relative error between an analytic gradient and
// its finite-difference estimate, with small entries compared against
// a floor tied to the gradient's overall scale.
double max_rel_err(const DTensor& analytic, const DTensor& fd);

struct GradCheckResult {
  std::string name;
  double worst = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Finite-difference validation of every layer gradient and every loss
// gradient on random small tensors, `seeds` instances each.
std::vector<GradCheckResult> run_layer_loss_checks(int seeds, std::ostream* log = nullptr);

// Finite-difference spot checks of randomly chosen parameters through
// the whole network and a cross-entropy head.
GradCheckResult run_end_to_end_check(const NetworkConfig& config, int input_size,
                                     int num_params, std::uint64_t seed,
                                     std::ostream* log = nullptr);

constexpr double kLayerTolerance = 1e-4;
constexpr double kEndToEndTolerance = 1e-3;

}  // namespace uncseg
