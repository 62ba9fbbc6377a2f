#include "uncseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uncseg {

void ConvSpec::validate() const {
  if (kernel < 1 || kernel % 2 == 0) {
    throw std::invalid_argument("conv: kernel size must be odd and positive");
  }
  if (dilation < 1) throw std::invalid_argument("conv: dilation must be positive");
  if (in_channels < 1 || out_channels < 1) {
    throw std::invalid_argument("conv: channel counts must be positive");
  }
}

namespace {

// Valid dilated convolution over raw [C,H,W] planes. Inner loops are
// plain strided row passes so they vectorize; the 3x3 case fuses the
// three taps of a kernel row into one pass.
template <typename T>
void conv_forward_core(const T* __restrict in, int H, int W, const T* __restrict weights,
                       const T* bias, int k, int d, int Ci, int Co, T* __restrict out,
                       int Ho, int Wo) {
  for (int co = 0; co < Co; ++co) {
    const T b = bias ? bias[co] : T(0);
    T* dst = out + static_cast<std::size_t>(co) * Ho * Wo;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(Ho) * Wo; ++i) dst[i] = b;
  }
  for (int co = 0; co < Co; ++co) {
    for (int y = 0; y < Ho; ++y) {
      T* __restrict dst = out + (static_cast<std::size_t>(co) * Ho + y) * Wo;
      for (int ci = 0; ci < Ci; ++ci) {
        const T* wrow = weights + (static_cast<std::size_t>(co) * Ci + ci) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          const T* src_row = in + (static_cast<std::size_t>(ci) * H + (y + ky * d)) * W;
          if (k == 3) {
            const T w0 = wrow[ky * 3 + 0], w1 = wrow[ky * 3 + 1], w2 = wrow[ky * 3 + 2];
            const T* __restrict s0 = src_row;
            const T* __restrict s1 = src_row + d;
            const T* __restrict s2 = src_row + 2 * d;
            for (int x = 0; x < Wo; ++x) dst[x] += w0 * s0[x] + w1 * s1[x] + w2 * s2[x];
          } else {
            for (int kx = 0; kx < k; ++kx) {
              const T w = wrow[ky * k + kx];
              const T* __restrict src = src_row + kx * d;
              for (int x = 0; x < Wo; ++x) dst[x] += w * src[x];
            }
          }
        }
      }
    }
  }
}

// Row dot product with eight independent accumulator lanes so the
// reduction vectorizes without reassociating a single serial sum. The
// summation order is fixed, so results stay run-to-run identical.
template <typename T>
struct DotLanes {
  T lane[8] = {};
  T tail = T(0);

  void rows(const T* __restrict a, const T* __restrict b, int n) {
    int x = 0;
    for (; x + 8 <= n; x += 8) {
      for (int j = 0; j < 8; ++j) lane[j] += a[x + j] * b[x + j];
    }
    for (; x < n; ++x) tail += a[x] * b[x];
  }

  T sum() const {
    return ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
           ((lane[4] + lane[5]) + (lane[6] + lane[7])) + tail;
  }
};

template <typename T>
struct SumLanes {
  T lane[8] = {};
  T tail = T(0);

  void rows(const T* __restrict a, int n) {
    int x = 0;
    for (; x + 8 <= n; x += 8) {
      for (int j = 0; j < 8; ++j) lane[j] += a[x + j];
    }
    for (; x < n; ++x) tail += a[x];
  }

  T sum() const {
    return ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
           ((lane[4] + lane[5]) + (lane[6] + lane[7])) + tail;
  }
};

// Accumulates weight and bias gradients for one sample.
template <typename T>
void conv_grad_wb_core(const T* __restrict go, const T* __restrict in, int H, int W, int k,
                       int d, int Ci, int Co, int Ho, int Wo, T* __restrict gw,
                       T* __restrict gb) {
  for (int co = 0; co < Co; ++co) {
    SumLanes<T> acc;
    for (int y = 0; y < Ho; ++y) {
      acc.rows(go + (static_cast<std::size_t>(co) * Ho + y) * Wo, Wo);
    }
    gb[co] += acc.sum();
  }
  for (int co = 0; co < Co; ++co) {
    for (int ci = 0; ci < Ci; ++ci) {
      T* wrow = gw + (static_cast<std::size_t>(co) * Ci + ci) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        if (k == 3) {
          DotLanes<T> acc0, acc1, acc2;
          for (int y = 0; y < Ho; ++y) {
            const T* a = go + (static_cast<std::size_t>(co) * Ho + y) * Wo;
            const T* b0 = in + (static_cast<std::size_t>(ci) * H + (y + ky * d)) * W;
            acc0.rows(a, b0, Wo);
            acc1.rows(a, b0 + d, Wo);
            acc2.rows(a, b0 + 2 * d, Wo);
          }
          wrow[ky * 3 + 0] += acc0.sum();
          wrow[ky * 3 + 1] += acc1.sum();
          wrow[ky * 3 + 2] += acc2.sum();
        } else {
          for (int kx = 0; kx < k; ++kx) {
            DotLanes<T> acc;
            for (int y = 0; y < Ho; ++y) {
              acc.rows(go + (static_cast<std::size_t>(co) * Ho + y) * Wo,
                       in + (static_cast<std::size_t>(ci) * H + (y + ky * d)) * W + kx * d,
                       Wo);
            }
            wrow[ky * k + kx] += acc.sum();
          }
        }
      }
    }
  }
}

// grad wrt input = valid dilated convolution of the zero-padded
// grad_out with the channel-transposed, spatially flipped kernel.
template <typename T>
struct ConvGradInputScratch {
  std::vector<T> padded;
  std::vector<T> flipped;
};

template <typename T>
void conv_grad_input_core(const T* go, const T* weights, int H, int W, int k, int d, int Ci,
                          int Co, int Ho, int Wo, T* gi, ConvGradInputScratch<T>& scratch) {
  const int pad = (k - 1) * d;
  const int Hp = Ho + 2 * pad, Wp = Wo + 2 * pad;
  scratch.padded.assign(static_cast<std::size_t>(Co) * Hp * Wp, T(0));
  for (int co = 0; co < Co; ++co) {
    for (int y = 0; y < Ho; ++y) {
      const T* src = go + (static_cast<std::size_t>(co) * Ho + y) * Wo;
      T* dst = scratch.padded.data() + (static_cast<std::size_t>(co) * Hp + y + pad) * Wp + pad;
      for (int x = 0; x < Wo; ++x) dst[x] = src[x];
    }
  }
  if (scratch.flipped.empty()) {
    scratch.flipped.assign(static_cast<std::size_t>(Ci) * Co * k * k, T(0));
    for (int co = 0; co < Co; ++co) {
      for (int ci = 0; ci < Ci; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            scratch.flipped[((static_cast<std::size_t>(ci) * Co + co) * k + ky) * k + kx] =
                weights[((static_cast<std::size_t>(co) * Ci + ci) * k + (k - 1 - ky)) * k +
                        (k - 1 - kx)];
          }
        }
      }
    }
  }
  conv_forward_core(scratch.padded.data(), Hp, Wp, scratch.flipped.data(),
                    static_cast<const T*>(nullptr), k, d, Co, Ci, gi, H, W);
}

template <typename T>
void check_conv_shapes(const TensorT<T>& input, const TensorT<T>& weights,
                       const TensorT<T>& bias, const ConvSpec& spec, int cdim) {
  spec.validate();
  if (input.dim(cdim) != spec.in_channels) {
    throw std::invalid_argument("conv: input channels do not match spec, got " +
                                shape_string(input.dims));
  }
  if (weights.dims != std::vector<int>{spec.out_channels, spec.in_channels, spec.kernel,
                                       spec.kernel}) {
    throw std::invalid_argument("conv: weights must be [C_out,C_in,k,k], got " +
                                shape_string(weights.dims));
  }
  if (bias.dims != std::vector<int>{spec.out_channels}) {
    throw std::invalid_argument("conv: bias must be [C_out], got " + shape_string(bias.dims));
  }
  const int H = input.dim(cdim + 1), W = input.dim(cdim + 2);
  if (H - (spec.kernel - 1) * spec.dilation < 1 || W - (spec.kernel - 1) * spec.dilation < 1) {
    throw std::invalid_argument("conv: effective kernel extent exceeds input size");
  }
}

}  // namespace

template <typename T>
TensorT<T> conv2d_dilated(const TensorT<T>& input, const TensorT<T>& weights,
                          const TensorT<T>& bias, const ConvSpec& spec) {
  if (input.ndim() != 3) throw std::invalid_argument("conv: input must be [C_in,H,W]");
  check_conv_shapes(input, weights, bias, spec, 0);
  const int H = input.dim(1), W = input.dim(2);
  const int k = spec.kernel, d = spec.dilation;
  const int Ho = H - (k - 1) * d, Wo = W - (k - 1) * d;
  TensorT<T> out({spec.out_channels, Ho, Wo});
  conv_forward_core(input.ptr(), H, W, weights.ptr(), bias.ptr(), k, d, spec.in_channels,
                    spec.out_channels, out.ptr(), Ho, Wo);
  ensure_finite(out, "conv2d_dilated");
  return out;
}

template <typename T>
ConvGrads<T> conv2d_dilated_grad(const TensorT<T>& grad_out, const TensorT<T>& input,
                                 const TensorT<T>& weights, const ConvSpec& spec) {
  if (input.ndim() != 3) throw std::invalid_argument("conv grad: input must be [C_in,H,W]");
  TensorT<T> dummy_bias({spec.out_channels});
  check_conv_shapes(input, weights, dummy_bias, spec, 0);
  const int H = input.dim(1), W = input.dim(2);
  const int k = spec.kernel, d = spec.dilation;
  const int Ho = H - (k - 1) * d, Wo = W - (k - 1) * d;
  if (grad_out.dims != std::vector<int>{spec.out_channels, Ho, Wo}) {
    throw std::invalid_argument("conv grad: grad_out shape mismatch, got " +
                                shape_string(grad_out.dims));
  }
  ConvGrads<T> g;
  g.input = TensorT<T>(input.dims);
  g.weights = TensorT<T>(weights.dims);
  g.bias = TensorT<T>({spec.out_channels});
  conv_grad_wb_core(grad_out.ptr(), input.ptr(), H, W, k, d, spec.in_channels,
                    spec.out_channels, Ho, Wo, g.weights.ptr(), g.bias.ptr());
  ConvGradInputScratch<T> scratch;
  conv_grad_input_core(grad_out.ptr(), weights.ptr(), H, W, k, d, spec.in_channels,
                       spec.out_channels, Ho, Wo, g.input.ptr(), scratch);
  return g;
}

template <typename T>
TensorT<T> conv2d_batched(const TensorT<T>& input, const TensorT<T>& weights,
                          const TensorT<T>& bias, const ConvSpec& spec) {
  if (input.ndim() != 4) throw std::invalid_argument("conv batched: input must be [N,C,H,W]");
  check_conv_shapes(input, weights, bias, spec, 1);
  const int N = input.dim(0), H = input.dim(2), W = input.dim(3);
  const int k = spec.kernel, d = spec.dilation;
  const int Ho = H - (k - 1) * d, Wo = W - (k - 1) * d;
  TensorT<T> out({N, spec.out_channels, Ho, Wo});
  const std::int64_t in_stride = std::int64_t(spec.in_channels) * H * W;
  const std::int64_t out_stride = std::int64_t(spec.out_channels) * Ho * Wo;
  for (int n = 0; n < N; ++n) {
    conv_forward_core(input.ptr() + n * in_stride, H, W, weights.ptr(), bias.ptr(), k, d,
                      spec.in_channels, spec.out_channels, out.ptr() + n * out_stride, Ho, Wo);
  }
  ensure_finite(out, "conv2d_dilated");
  return out;
}

template <typename T>
ConvGrads<T> conv2d_batched_grad(const TensorT<T>& grad_out, const TensorT<T>& input,
                                 const TensorT<T>& weights, const ConvSpec& spec) {
  if (input.ndim() != 4 || grad_out.ndim() != 4 || input.dim(0) != grad_out.dim(0)) {
    throw std::invalid_argument("conv batched grad: need matching [N,...] tensors");
  }
  const int N = input.dim(0), H = input.dim(2), W = input.dim(3);
  const int k = spec.kernel, d = spec.dilation;
  const int Ho = H - (k - 1) * d, Wo = W - (k - 1) * d;
  ConvGrads<T> g;
  g.input = TensorT<T>(input.dims);
  g.weights = TensorT<T>(weights.dims);
  g.bias = TensorT<T>({spec.out_channels});
  const std::int64_t in_stride = std::int64_t(spec.in_channels) * H * W;
  const std::int64_t out_stride = std::int64_t(spec.out_channels) * Ho * Wo;
  ConvGradInputScratch<T> scratch;
  for (int n = 0; n < N; ++n) {
    conv_grad_wb_core(grad_out.ptr() + n * out_stride, input.ptr() + n * in_stride, H, W, k,
                      d, spec.in_channels, spec.out_channels, Ho, Wo, g.weights.ptr(),
                      g.bias.ptr());
    conv_grad_input_core(grad_out.ptr() + n * out_stride, weights.ptr(), H, W, k, d,
                         spec.in_channels, spec.out_channels, Ho, Wo,
                         g.input.ptr() + n * in_stride, scratch);
  }
  return g;
}

template <typename T>
BatchNormState<T> make_batch_norm_state(int channels) {
  BatchNormState<T> s;
  s.running_mean = TensorT<T>({channels});
  s.running_var = TensorT<T>({channels}, T(1));
  return s;
}

template <typename T>
TensorT<T> batch_norm(const TensorT<T>& input, const TensorT<T>& gamma,
                      const TensorT<T>& beta, BatchNormState<T>& state, Mode mode,
                      BatchNormCache<T>* cache) {
  if (mode != Mode::train) return batch_norm_eval(input, gamma, beta, state);
  if (input.ndim() != 4) throw std::invalid_argument("batch_norm: input must be [N,C,H,W]");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (gamma.dims != std::vector<int>{C} || beta.dims != std::vector<int>{C}) {
    throw std::invalid_argument("batch_norm: gamma/beta must be [C]");
  }
  const std::int64_t M = static_cast<std::int64_t>(N) * H * W;
  if (M < 2) throw std::invalid_argument("batch_norm: train mode needs N*H*W >= 2");

  TensorT<T> out(input.dims);
  if (cache) {
    cache->xhat = TensorT<T>(input.dims);
    cache->inv_std = TensorT<T>({C});
  }
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  for (int c = 0; c < C; ++c) {
    double sum = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* src = input.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) sum += src[i];
    }
    const double mean = sum / double(M);
    double sq = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* src = input.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double dlt = src[i] - mean;
        sq += dlt * dlt;
      }
    }
    const double var = sq / double(M);  // population variance
    const double inv_std = 1.0 / std::sqrt(var + kBatchNormEps);
    const double g = gamma(c), b = beta(c);
    for (int n = 0; n < N; ++n) {
      const T* src = input.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
      T* dst = out.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
      T* xh = cache ? cache->xhat.ptr() + (static_cast<std::size_t>(n) * C + c) * plane
                    : nullptr;
      for (std::int64_t i = 0; i < plane; ++i) {
        const T xhat = T((src[i] - mean) * inv_std);
        if (xh) xh[i] = xhat;
        dst[i] = T(g * xhat + b);
      }
    }
    if (cache) cache->inv_std(c) = T(inv_std);
    state.running_mean(c) =
        T((1.0 - kBatchNormMomentum) * state.running_mean(c) + kBatchNormMomentum * mean);
    state.running_var(c) =
        T((1.0 - kBatchNormMomentum) * state.running_var(c) + kBatchNormMomentum * var);
  }
  ensure_finite(out, "batch_norm");
  return out;
}

template <typename T>
TensorT<T> batch_norm_eval(const TensorT<T>& input, const TensorT<T>& gamma,
                           const TensorT<T>& beta, const BatchNormState<T>& state) {
  if (input.ndim() != 4) throw std::invalid_argument("batch_norm: input must be [N,C,H,W]");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  TensorT<T> out(input.dims);
  for (int c = 0; c < C; ++c) {
    const double inv_std = 1.0 / std::sqrt(double(state.running_var(c)) + kBatchNormEps);
    const double mean = state.running_mean(c);
    const double g = gamma(c), b = beta(c);
    for (int n = 0; n < N; ++n) {
      const T* src = input.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
      T* dst = out.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        dst[i] = T(g * (src[i] - mean) * inv_std + b);
      }
    }
  }
  ensure_finite(out, "batch_norm");
  return out;
}

template <typename T>
BatchNormGrads<T> batch_norm_grad(const TensorT<T>& grad_out, const TensorT<T>& gamma,
                                  const BatchNormCache<T>& cache) {
  const TensorT<T>& xhat = cache.xhat;
  if (!grad_out.same_shape(xhat)) {
    throw std::invalid_argument("batch_norm_grad: grad shape mismatch");
  }
  const int N = grad_out.dim(0), C = grad_out.dim(1), H = grad_out.dim(2), W = grad_out.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  const std::int64_t M = static_cast<std::int64_t>(N) * plane;

  BatchNormGrads<T> g;
  g.input = TensorT<T>(grad_out.dims);
  g.gamma = TensorT<T>({C});
  g.beta = TensorT<T>({C});

  for (int c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* dy = grad_out.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
      const T* xh = xhat.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += double(dy[i]) * xh[i];
      }
    }
    g.beta(c) = T(sum_dy);
    g.gamma(c) = T(sum_dy_xhat);
    const double mean_dy = sum_dy / double(M);
    const double mean_dy_xhat = sum_dy_xhat / double(M);
    const double scale = double(gamma(c)) * cache.inv_std(c);
    for (int n = 0; n < N; ++n) {
      const T* dy = grad_out.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
      const T* xh = xhat.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
      T* dx = g.input.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        dx[i] = T(scale * (dy[i] - mean_dy - double(xh[i]) * mean_dy_xhat));
      }
    }
  }
  return g;
}

template <typename T>
DropoutResult<T> dropout(const TensorT<T>& input, double rate, Mode mode, RngStream rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  DropoutResult<T> r;
  r.mask = TensorT<T>(input.dims, T(1));
  if (mode == Mode::eval || rate == 0.0) {
    r.output = input;
    return r;
  }
  r.output = TensorT<T>(input.dims);
  const T scale = T(1.0 / (1.0 - rate));
  for (std::int64_t i = 0; i < input.numel(); ++i) {
    if (rng.next_double() < rate) {
      r.mask.data[i] = T(0);
      r.output.data[i] = T(0);
    } else {
      r.output.data[i] = input.data[i] * scale;
    }
  }
  return r;
}

template <typename T>
TensorT<T> dropout_grad(const TensorT<T>& grad_out, const TensorT<T>& mask, double rate) {
  if (!grad_out.same_shape(mask)) throw std::invalid_argument("dropout_grad: shape mismatch");
  TensorT<T> g(grad_out.dims);
  const T scale = T(1.0 / (1.0 - rate));
  for (std::int64_t i = 0; i < g.numel(); ++i) {
    g.data[i] = grad_out.data[i] * mask.data[i] * scale;
  }
  return g;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& input) {
  TensorT<T> out(input.dims);
  for (std::int64_t i = 0; i < input.numel(); ++i) {
    out.data[i] = input.data[i] > T(0) ? input.data[i] : T(0);
  }
  return out;
}

template <typename T>
TensorT<T> relu_grad(const TensorT<T>& grad_out, const TensorT<T>& input) {
  if (!grad_out.same_shape(input)) throw std::invalid_argument("relu_grad: shape mismatch");
  TensorT<T> g(grad_out.dims);
  for (std::int64_t i = 0; i < g.numel(); ++i) {
    g.data[i] = input.data[i] > T(0) ? grad_out.data[i] : T(0);
  }
  return g;
}

namespace {

template <typename T>
void softmax_one_sample(const T* logits, T* probs, std::int64_t plane) {
  // two groups of four channels, softmax per voxel within each group
  for (int grp = 0; grp < 2; ++grp) {
    const T* in = logits + static_cast<std::size_t>(grp) * 4 * plane;
    T* out = probs + static_cast<std::size_t>(grp) * 4 * plane;
    for (std::int64_t v = 0; v < plane; ++v) {
      T m = in[v];
      for (int c = 1; c < 4; ++c) m = std::max(m, in[c * plane + v]);
      double denom = 0.0;
      double e[4];
      for (int c = 0; c < 4; ++c) {
        e[c] = std::exp(double(in[c * plane + v]) - double(m));
        denom += e[c];
      }
      for (int c = 0; c < 4; ++c) out[c * plane + v] = T(e[c] / denom);
    }
  }
}

}  // namespace

template <typename T>
TensorT<T> softmax_groups(const TensorT<T>& logits) {
  const int cdim = logits.ndim() == 4 ? 1 : 0;
  if ((logits.ndim() != 3 && logits.ndim() != 4) || logits.dim(cdim) != 8) {
    throw std::invalid_argument("softmax_groups: expected 8 channels, got " +
                                shape_string(logits.dims));
  }
  TensorT<T> probs(logits.dims);
  const std::int64_t plane =
      static_cast<std::int64_t>(logits.dim(cdim + 1)) * logits.dim(cdim + 2);
  const int N = logits.ndim() == 4 ? logits.dim(0) : 1;
  for (int n = 0; n < N; ++n) {
    softmax_one_sample(logits.ptr() + static_cast<std::size_t>(n) * 8 * plane,
                       probs.ptr() + static_cast<std::size_t>(n) * 8 * plane, plane);
  }
  return probs;
}

template <typename T>
TensorT<T> softmax_groups_grad(const TensorT<T>& probs, const TensorT<T>& grad_probs) {
  if (!probs.same_shape(grad_probs)) {
    throw std::invalid_argument("softmax_groups_grad: shape mismatch");
  }
  const int cdim = probs.ndim() == 4 ? 1 : 0;
  const std::int64_t plane =
      static_cast<std::int64_t>(probs.dim(cdim + 1)) * probs.dim(cdim + 2);
  const int N = probs.ndim() == 4 ? probs.dim(0) : 1;
  TensorT<T> g(probs.dims);
  for (int n = 0; n < N; ++n) {
    for (int grp = 0; grp < 2; ++grp) {
      const T* p = probs.ptr() + (static_cast<std::size_t>(n) * 8 + grp * 4) * plane;
      const T* dp = grad_probs.ptr() + (static_cast<std::size_t>(n) * 8 + grp * 4) * plane;
      T* dl = g.ptr() + (static_cast<std::size_t>(n) * 8 + grp * 4) * plane;
      for (std::int64_t v = 0; v < plane; ++v) {
        double dot = 0.0;
        for (int c = 0; c < 4; ++c) dot += double(p[c * plane + v]) * dp[c * plane + v];
        for (int c = 0; c < 4; ++c) {
          dl[c * plane + v] = T(double(p[c * plane + v]) * (dp[c * plane + v] - dot));
        }
      }
    }
  }
  return g;
}

#define UNCSEG_INSTANTIATE_OPS(T)                                                        \
  template TensorT<T> conv2d_dilated<T>(const TensorT<T>&, const TensorT<T>&,            \
                                        const TensorT<T>&, const ConvSpec&);             \
  template ConvGrads<T> conv2d_dilated_grad<T>(const TensorT<T>&, const TensorT<T>&,     \
                                               const TensorT<T>&, const ConvSpec&);      \
  template TensorT<T> conv2d_batched<T>(const TensorT<T>&, const TensorT<T>&,            \
                                        const TensorT<T>&, const ConvSpec&);             \
  template ConvGrads<T> conv2d_batched_grad<T>(const TensorT<T>&, const TensorT<T>&,     \
                                               const TensorT<T>&, const ConvSpec&);      \
  template BatchNormState<T> make_batch_norm_state<T>(int);                              \
  template TensorT<T> batch_norm<T>(const TensorT<T>&, const TensorT<T>&,                \
                                    const TensorT<T>&, BatchNormState<T>&, Mode,         \
                                    BatchNormCache<T>*);                                 \
  template TensorT<T> batch_norm_eval<T>(const TensorT<T>&, const TensorT<T>&,           \
                                         const TensorT<T>&, const BatchNormState<T>&);   \
  template BatchNormGrads<T> batch_norm_grad<T>(const TensorT<T>&, const TensorT<T>&,    \
                                                const BatchNormCache<T>&);               \
  template DropoutResult<T> dropout<T>(const TensorT<T>&, double, Mode, RngStream);      \
  template TensorT<T> dropout_grad<T>(const TensorT<T>&, const TensorT<T>&, double);     \
  template TensorT<T> relu<T>(const TensorT<T>&);                                        \
  template TensorT<T> relu_grad<T>(const TensorT<T>&, const TensorT<T>&);                \
  template TensorT<T> softmax_groups<T>(const TensorT<T>&);                              \
  template TensorT<T> softmax_groups_grad<T>(const TensorT<T>&, const TensorT<T>&);

UNCSEG_INSTANTIATE_OPS(float)
UNCSEG_INSTANTIATE_OPS(double)

#undef UNCSEG_INSTANTIATE_OPS

}  // namespace uncseg
