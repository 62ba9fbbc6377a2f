#pragma once

#include "uncseg/rng.hpp"
#include "uncseg/tensor.hpp"

namespace uncseg {

enum class Mode { train, eval, mc };

// Spatially dilated 2D convolution, valid (unpadded) only.
struct ConvSpec {
  int kernel = 3;
  int dilation = 1;
  int in_channels = 0;
  int out_channels = 0;

  // Input window touched by one output voxel along each axis.
  int extent() const { return (kernel - 1) * dilation + 1; }
  void validate() const;
};

// input [C_in,H,W], weights [C_out,C_in,k,k], bias [C_out] -> [C_out,H',W']
// with H' = H - (k-1)*dilation.
template <typename T>
TensorT<T> conv2d_dilated(const TensorT<T>& input, const TensorT<T>& weights,
                          const TensorT<T>& bias, const ConvSpec& spec);

template <typename T>
struct ConvGrads {
  TensorT<T> input;
  TensorT<T> weights;
  TensorT<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_dilated_grad(const TensorT<T>& grad_out, const TensorT<T>& input,
                                 const TensorT<T>& weights, const ConvSpec& spec);

// Batched wrappers over [N,C,H,W]; the per-sample op above is the core.
template <typename T>
TensorT<T> conv2d_batched(const TensorT<T>& input, const TensorT<T>& weights,
                          const TensorT<T>& bias, const ConvSpec& spec);

template <typename T>
ConvGrads<T> conv2d_batched_grad(const TensorT<T>& grad_out, const TensorT<T>& input,
                                 const TensorT<T>& weights, const ConvSpec& spec);

// Running statistics carried across training iterations.
template <typename T>
struct BatchNormState {
  TensorT<T> running_mean;
  TensorT<T> running_var;
};

template <typename T>
BatchNormState<T> make_batch_norm_state(int channels);

// Saved intermediates for the backward pass (train mode only).
template <typename T>
struct BatchNormCache {
  TensorT<T> xhat;
  TensorT<T> inv_std;  // per channel
};

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

// input [N,C,H,W]. Train mode normalizes with batch statistics
// (population variance) and updates the running statistics in place;
// eval and mc modes use the running statistics and leave state alone.
template <typename T>
TensorT<T> batch_norm(const TensorT<T>& input, const TensorT<T>& gamma,
                      const TensorT<T>& beta, BatchNormState<T>& state, Mode mode,
                      BatchNormCache<T>* cache = nullptr);

template <typename T>
TensorT<T> batch_norm_eval(const TensorT<T>& input, const TensorT<T>& gamma,
                           const TensorT<T>& beta, const BatchNormState<T>& state);

template <typename T>
struct BatchNormGrads {
  TensorT<T> input;
  TensorT<T> gamma;
  TensorT<T> beta;
};

template <typename T>
BatchNormGrads<T> batch_norm_grad(const TensorT<T>& grad_out, const TensorT<T>& gamma,
                                  const BatchNormCache<T>& cache);

template <typename T>
struct DropoutResult {
  TensorT<T> output;
  TensorT<T> mask;  // 0/1 per unit
};

// Inverted dropout: train and mc modes zero units with probability
// `rate` and scale survivors by 1/(1-rate); eval mode is the identity.
template <typename T>
DropoutResult<T> dropout(const TensorT<T>& input, double rate, Mode mode, RngStream rng);

template <typename T>
TensorT<T> dropout_grad(const TensorT<T>& grad_out, const TensorT<T>& mask, double rate);

template <typename T>
TensorT<T> relu(const TensorT<T>& input);

template <typename T>
TensorT<T> relu_grad(const TensorT<T>& grad_out, const TensorT<T>& input);

// Softmax over two independent 4-class groups per voxel: channels 0-3
// are the ED classes, channels 4-7 the ES classes. Accepts [8,H,W] or
// [N,8,H,W]. Stabilized by max subtraction within each group.
template <typename T>
TensorT<T> softmax_groups(const TensorT<T>& logits);

// grad wrt logits given probs = softmax_groups(logits) and grad wrt probs.
template <typename T>
TensorT<T> softmax_groups_grad(const TensorT<T>& probs, const TensorT<T>& grad_probs);

}  // namespace uncseg
