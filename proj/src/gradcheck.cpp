#include "uncseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "uncseg/losses.hpp"
#include "uncseg/ops.hpp"

namespace uncseg {

DTensor fd_gradient(DTensor& x, const std::function<double()>& f, double h) {
  DTensor g(x.dims);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double saved = x.data[std::size_t(i)];
    x.data[std::size_t(i)] = saved + h;
    const double fp = f();
    x.data[std::size_t(i)] = saved - h;
    const double fm = f();
    x.data[std::size_t(i)] = saved;
    g.data[std::size_t(i)] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double max_rel_err(const DTensor& analytic, const DTensor& fd) {
  if (!analytic.same_shape(fd)) throw std::invalid_argument("max_rel_err: shape mismatch");
  double scale = 1e-8;
  for (const double& v : analytic.data) scale = std::max(scale, std::abs(v));
  double worst = 0.0;
  for (std::int64_t i = 0; i < analytic.numel(); ++i) {
    const double a = analytic.data[std::size_t(i)];
    const double b = fd.data[std::size_t(i)];
    const double denom = std::max({std::abs(a), std::abs(b), 1e-3 * scale});
    worst = std::max(worst, std::abs(a - b) / denom);
  }
  return worst;
}

namespace {

DTensor random_tensor(std::vector<int> dims, RngStream& rng, double lo = -1.0,
                      double hi = 1.0) {
  DTensor t(std::move(dims));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// values at least `gap` away from zero, for the ReLU kink
DTensor random_tensor_off_kink(std::vector<int> dims, RngStream& rng, double gap = 0.1) {
  DTensor t(std::move(dims));
  for (double& v : t.data) {
    const double mag = rng.uniform(gap, 2.0);
    v = rng.next_u64() & 1 ? mag : -mag;
  }
  return t;
}

double projected(const DTensor& t, const DTensor& r) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < t.numel(); ++i) acc += t.data[std::size_t(i)] * r.data[std::size_t(i)];
  return acc;
}

struct Worst {
  double v = 0.0;
  void track(double x) { v = std::max(v, x); }
};

void check_conv(RngStream rng, Worst& worst) {
  ConvSpec spec;
  spec.kernel = rng.next_u64() & 1 ? 3 : 1;
  spec.dilation = spec.kernel == 3 ? 1 + int(rng.uniform_int(2)) : 1;
  spec.in_channels = 1 + int(rng.uniform_int(2));
  spec.out_channels = 1 + int(rng.uniform_int(2));
  const int hw = spec.extent() + 1 + int(rng.uniform_int(4));

  DTensor input = random_tensor({spec.in_channels, hw, hw}, rng);
  DTensor weights = random_tensor({spec.out_channels, spec.in_channels, spec.kernel,
                                   spec.kernel},
                                  rng);
  DTensor bias = random_tensor({spec.out_channels}, rng);
  DTensor out = conv2d_dilated(input, weights, bias, spec);
  DTensor proj = random_tensor(out.dims, rng);

  ConvGrads<double> g = conv2d_dilated_grad(proj, input, weights, spec);
  auto f = [&] { return projected(conv2d_dilated(input, weights, bias, spec), proj); };
  worst.track(max_rel_err(g.input, fd_gradient(input, f)));
  worst.track(max_rel_err(g.weights, fd_gradient(weights, f)));
  worst.track(max_rel_err(g.bias, fd_gradient(bias, f)));
}

void check_batch_norm(RngStream rng, Worst& worst) {
  const int N = 2, C = 2, H = 3, W = 3;
  DTensor input = random_tensor({N, C, H, W}, rng);
  DTensor gamma = random_tensor({C}, rng, 0.5, 1.5);
  DTensor beta = random_tensor({C}, rng, -0.5, 0.5);
  DTensor proj = random_tensor(input.dims, rng);

  auto run = [&](BatchNormCache<double>* cache) {
    BatchNormState<double> state = make_batch_norm_state<double>(C);
    return batch_norm(input, gamma, beta, state, Mode::train, cache);
  };
  BatchNormCache<double> cache;
  run(&cache);
  BatchNormGrads<double> g = batch_norm_grad(proj, gamma, cache);
  auto f = [&] { return projected(run(nullptr), proj); };
  worst.track(max_rel_err(g.input, fd_gradient(input, f)));
  worst.track(max_rel_err(g.gamma, fd_gradient(gamma, f)));
  worst.track(max_rel_err(g.beta, fd_gradient(beta, f)));
}

void check_relu(RngStream rng, Worst& worst) {
  DTensor input = random_tensor_off_kink({3, 4, 4}, rng);
  DTensor proj = random_tensor(input.dims, rng);
  DTensor g = relu_grad(proj, input);
  auto f = [&] { return projected(relu(input), proj); };
  worst.track(max_rel_err(g, fd_gradient(input, f, 1e-3)));
}

void check_dropout(RngStream rng, Worst& worst) {
  const RngStream mask_stream = rng.derive(99);
  DTensor input = random_tensor({2, 4, 4}, rng);
  DTensor proj = random_tensor(input.dims, rng);
  DropoutResult<double> dr = dropout(input, 0.3, Mode::train, mask_stream);
  DTensor g = dropout_grad(proj, dr.mask, 0.3);
  auto f = [&] { return projected(dropout(input, 0.3, Mode::train, mask_stream).output, proj); };
  worst.track(max_rel_err(g, fd_gradient(input, f)));
}

void check_softmax(RngStream rng, Worst& worst) {
  DTensor logits = random_tensor({8, 3, 3}, rng, -2.0, 2.0);
  DTensor proj = random_tensor(logits.dims, rng);
  DTensor probs = softmax_groups(logits);
  DTensor g = softmax_groups_grad(probs, proj);
  auto f = [&] { return projected(softmax_groups(logits), proj); };
  worst.track(max_rel_err(g, fd_gradient(logits, f)));
}

LabelMap random_labels(std::vector<int> dims, RngStream& rng) {
  LabelMap m(std::move(dims));
  for (auto& v : m.data) v = std::uint8_t(rng.uniform_int(kNumClasses));
  return m;
}

void check_loss(LossKind kind, RngStream rng, Worst& worst) {
  DTensor probs = random_tensor({4, 3, 3}, rng, 0.05, 0.95);
  LabelMap ref = random_labels({3, 3}, rng);
  LossResult<double> r = compute_loss(kind, probs, ref);
  auto f = [&] { return double(compute_loss(kind, probs, ref).value); };
  worst.track(max_rel_err(r.grad, fd_gradient(probs, f)));
}

}  // namespace

std::vector<GradCheckResult> run_layer_loss_checks(int seeds, std::ostream* log) {
  struct Entry {
    const char* name;
    std::function<void(RngStream, Worst&)> fn;
  };
  const std::vector<Entry> entries = {
      {"conv2d_dilated", check_conv},
      {"batch_norm", check_batch_norm},
      {"relu", check_relu},
      {"dropout", check_dropout},
      {"softmax_groups", check_softmax},
      {"cross_entropy", [](RngStream r, Worst& w) { check_loss(LossKind::cross_entropy, r, w); }},
      {"soft_dice", [](RngStream r, Worst& w) { check_loss(LossKind::soft_dice, r, w); }},
      {"brier", [](RngStream r, Worst& w) { check_loss(LossKind::brier, r, w); }},
  };
  std::vector<GradCheckResult> results;
  for (const Entry& e : entries) {
    Worst worst;
    for (int s = 0; s < seeds; ++s) {
      e.fn(RngStream(std::uint64_t(s) + 17, 0), worst);
    }
    GradCheckResult r;
    r.name = e.name;
    r.worst = worst.v;
    r.tolerance = kLayerTolerance;
    r.pass = worst.v < kLayerTolerance;
    if (log) {
      *log << (r.pass ? "  ok   " : "  FAIL ") << r.name << "  max rel err " << r.worst
           << "\n";
    }
    results.push_back(std::move(r));
  }
  return results;
}

GradCheckResult run_end_to_end_check(const NetworkConfig& config, int input_size,
                                     int num_params, std::uint64_t seed, std::ostream* log) {
  RngStream rng(seed, 0);
  NetworkParamsT<double> net = build_network<double>(config, rng.derive(1));
  const int out_size = input_size - (config.receptive_field() - 1);
  if (out_size < 2) {
    throw std::invalid_argument("end-to-end check: input too small for batch statistics");
  }

  TensorT<double> input({1, 2, input_size, input_size});
  RngStream data_rng = rng.derive(2);
  for (double& v : input.data) v = data_rng.uniform(0.0, 1.0);
  LabelMap ed_ref = random_labels({out_size, out_size}, data_rng);
  LabelMap es_ref = random_labels({out_size, out_size}, data_rng);
  const RngStream drop_rng = rng.derive(3);

  // loss = sum over both phases of the cross entropy; when requested,
  // also emit the gradient back at the logits
  auto forward_loss = [&](ForwardCache<double>* c, TensorT<double>* grad_logits_out) {
    TensorT<double> logits = forward_batched(net, input, Mode::train, drop_rng, c);
    TensorT<double> probs = softmax_groups(logits);
    const std::int64_t plane = std::int64_t(probs.dim(2)) * probs.dim(3);
    TensorT<double> sub({4, probs.dim(2), probs.dim(3)});
    TensorT<double> grad_probs(probs.dims);
    double total = 0.0;
    for (int phase = 0; phase < 2; ++phase) {
      std::copy(probs.data.begin() + std::size_t(phase) * 4 * plane,
                probs.data.begin() + std::size_t(phase + 1) * 4 * plane, sub.data.begin());
      LossResult<double> lr =
          compute_loss(LossKind::cross_entropy, sub, phase == 0 ? ed_ref : es_ref);
      total += lr.value;
      std::copy(lr.grad.data.begin(), lr.grad.data.end(),
                grad_probs.data.begin() + std::size_t(phase) * 4 * plane);
    }
    if (grad_logits_out) *grad_logits_out = softmax_groups_grad(probs, grad_probs);
    return total;
  };

  ForwardCache<double> cache;
  TensorT<double> grad_logits;
  forward_loss(&cache, &grad_logits);
  std::vector<LayerGrads<double>> grads = backward_batched(net, cache, grad_logits);

  // flatten (tensor pointer, analytic grad pointer) pairs
  std::vector<std::pair<TensorT<double>*, TensorT<double>*>> pairs;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    pairs.push_back({&net.layers[i].weight, &grads[i].weight});
    pairs.push_back({&net.layers[i].bias, &grads[i].bias});
    if (net.layers[i].has_bn) {
      pairs.push_back({&net.layers[i].gamma, &grads[i].gamma});
      pairs.push_back({&net.layers[i].beta, &grads[i].beta});
    }
  }

  RngStream pick = rng.derive(4);
  DTensor analytic_sel({num_params});
  DTensor fd_sel({num_params});
  // small enough that the +-h interval almost never crosses a ReLU
  // kink anywhere in the net; at 64 bit the quotient noise stays far
  // below the tolerance
  const double h = 1e-6;
  for (int p = 0; p < num_params; ++p) {
    const std::size_t which = std::size_t(pick.uniform_int(pairs.size()));
    TensorT<double>* tensor = pairs[which].first;
    const std::int64_t coord = std::int64_t(pick.uniform_int(std::uint64_t(tensor->numel())));
    analytic_sel(p) = pairs[which].second->data[std::size_t(coord)];
    const double saved = tensor->data[std::size_t(coord)];
    tensor->data[std::size_t(coord)] = saved + h;
    const double fp = forward_loss(nullptr, nullptr);
    tensor->data[std::size_t(coord)] = saved - h;
    const double fm = forward_loss(nullptr, nullptr);
    tensor->data[std::size_t(coord)] = saved;
    fd_sel(p) = (fp - fm) / (2.0 * h);
  }

  GradCheckResult r;
  r.name = "end_to_end";
  r.worst = max_rel_err(analytic_sel, fd_sel);
  r.tolerance = kEndToEndTolerance;
  r.pass = r.worst < kEndToEndTolerance;
  if (log) {
    *log << (r.pass ? "  ok   " : "  FAIL ") << r.name << " (" << num_params
         << " parameters)  max rel err " << r.worst << "\n";
  }
  return r;
}

}  // namespace uncseg
