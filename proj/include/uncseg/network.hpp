#pragma once

#include <string>
#include <vector>

#include "uncseg/ops.hpp"
#include "uncseg/rng.hpp"
#include "uncseg/tensor.hpp"

namespace uncseg {

// Ten convolutional layers; all but the last are followed by batch
// norm, ReLU and dropout. Two input channels (ED, ES slice), eight
// output channels (4 classes x 2 phases).
struct NetworkConfig {
  std::vector<int> layer_kernels;
  std::vector<int> layer_dilations;
  int channels = 32;
  double dropout_rate = 0.10;
  int num_classes = 4;
  int num_phases = 2;
  // When nonzero, build_network refuses configs whose computed
  // receptive field differs from this.
  int expected_receptive_field = 0;

  static NetworkConfig defaults();
  int receptive_field() const;
  int num_layers() const { return static_cast<int>(layer_kernels.size()); }
  void validate() const;

  bool operator==(const NetworkConfig&) const = default;
};

// 1 + sum over layers of (kernel-1)*dilation.
int receptive_field(const std::vector<int>& kernels, const std::vector<int>& dilations);
inline int receptive_field(const NetworkConfig& config) { return config.receptive_field(); }

template <typename T>
struct LayerParamsT {
  TensorT<T> weight;  // [C_out,C_in,k,k]
  TensorT<T> bias;    // [C_out]
  bool has_bn = false;
  TensorT<T> gamma;
  TensorT<T> beta;
  BatchNormState<T> bn;
};

template <typename T>
struct NetworkParamsT {
  NetworkConfig config;
  std::vector<LayerParamsT<T>> layers;
};

using NetworkParams = NetworkParamsT<float>;

template <typename T>
NetworkParamsT<T> build_network(const NetworkConfig& config, RngStream rng);

// Zero padding of `pad` voxels on every side of a [H,W] image.
template <typename T>
TensorT<T> pad_input(const TensorT<T>& image, int pad);

// Saved per-layer intermediates for backprop.
template <typename T>
struct ForwardCache {
  std::vector<TensorT<T>> conv_inputs;
  std::vector<BatchNormCache<T>> bn;
  std::vector<TensorT<T>> relu_inputs;
  std::vector<TensorT<T>> dropout_masks;
  TensorT<T> logits;  // [N,8,H',W']
};

// Batched forward over [N,2,H,W]. Train mode updates batch-norm
// running statistics in place, which is why params is mutable here.
template <typename T>
TensorT<T> forward_batched(NetworkParamsT<T>& params, const TensorT<T>& input, Mode mode,
                           RngStream rng, ForwardCache<T>* cache = nullptr);

// Inference-only forward (eval or mc); params untouched.
template <typename T>
TensorT<T> forward_infer(const NetworkParamsT<T>& params, const TensorT<T>& input, Mode mode,
                         RngStream rng);

// Single-sample forward: [H,W] ED and ES slices to [8,H',W'] logits.
template <typename T>
TensorT<T> forward(const NetworkParamsT<T>& params, const TensorT<T>& ed_slice,
                   const TensorT<T>& es_slice, Mode mode, RngStream rng);

template <typename T>
struct LayerGrads {
  TensorT<T> weight;
  TensorT<T> bias;
  TensorT<T> gamma;  // empty when layer has no batch norm
  TensorT<T> beta;
};

template <typename T>
std::vector<LayerGrads<T>> backward_batched(const NetworkParamsT<T>& params,
                                            const ForwardCache<T>& cache,
                                            const TensorT<T>& grad_logits);

// Checkpoints are a directory of raw tensors plus a plain-text
// manifest echoing the config and the training iteration.
void save_checkpoint(const std::string& dir, const NetworkParams& params,
                     std::int64_t iteration);

struct Checkpoint {
  NetworkParams params;
  std::int64_t iteration = 0;
};

Checkpoint load_checkpoint(const std::string& dir);

}  // namespace uncseg
