#include "uncseg/network.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "uncseg/io.hpp"

namespace fs = std::filesystem;

namespace uncseg {

NetworkConfig NetworkConfig::defaults() {
  NetworkConfig c;
  c.layer_kernels = {3, 3, 3, 3, 3, 3, 3, 3, 1, 1};
  c.layer_dilations = {1, 1, 2, 4, 8, 16, 32, 1, 1, 1};
  c.channels = 32;
  c.dropout_rate = 0.10;
  c.expected_receptive_field = 131;
  return c;
}

int receptive_field(const std::vector<int>& kernels, const std::vector<int>& dilations) {
  if (kernels.size() != dilations.size()) {
    throw std::invalid_argument("receptive_field: kernel/dilation lists differ in length");
  }
  int rf = 1;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    rf += (kernels[i] - 1) * dilations[i];
  }
  return rf;
}

int NetworkConfig::receptive_field() const {
  return uncseg::receptive_field(layer_kernels, layer_dilations);
}

void NetworkConfig::validate() const {
  if (layer_kernels.size() != 10 || layer_dilations.size() != 10) {
    throw std::invalid_argument("network: exactly ten layers expected");
  }
  for (int k : layer_kernels) {
    if (k != 1 && k != 3) throw std::invalid_argument("network: kernel sizes must be 1 or 3");
  }
  for (int d : layer_dilations) {
    if (d < 1) throw std::invalid_argument("network: dilations must be positive");
  }
  if (channels < 1) throw std::invalid_argument("network: channels must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw std::invalid_argument("network: dropout rate must be in [0,1)");
  }
  if (num_classes != 4 || num_phases != 2) {
    throw std::invalid_argument("network: fixed 4-class, 2-phase head expected");
  }
  if (expected_receptive_field != 0 && receptive_field() != expected_receptive_field) {
    throw std::invalid_argument("network: computed receptive field " +
                                std::to_string(receptive_field()) +
                                " does not match declared " +
                                std::to_string(expected_receptive_field));
  }
}

template <typename T>
NetworkParamsT<T> build_network(const NetworkConfig& config, RngStream rng) {
  config.validate();
  NetworkParamsT<T> net;
  net.config = config;
  const int L = config.num_layers();
  for (int i = 0; i < L; ++i) {
    const int in_ch = i == 0 ? config.num_phases : config.channels;
    const int out_ch = i == L - 1 ? config.num_classes * config.num_phases : config.channels;
    const int k = config.layer_kernels[std::size_t(i)];
    LayerParamsT<T> layer;
    layer.weight = TensorT<T>({out_ch, in_ch, k, k});
    layer.bias = TensorT<T>({out_ch});
    // uniform init with a fan-in scaled bound
    const double bound = std::sqrt(6.0 / (double(in_ch) * k * k));
    RngStream lr = rng.derive(std::uint64_t(i));
    for (auto& w : layer.weight.data) w = T(lr.uniform(-bound, bound));
    layer.has_bn = i < L - 1;
    if (layer.has_bn) {
      layer.gamma = TensorT<T>({out_ch}, T(1));
      layer.beta = TensorT<T>({out_ch});
      layer.bn = make_batch_norm_state<T>(out_ch);
    }
    net.layers.push_back(std::move(layer));
  }
  return net;
}

template <typename T>
TensorT<T> pad_input(const TensorT<T>& image, int pad) {
  if (image.ndim() != 2) throw std::invalid_argument("pad_input: image must be [H,W]");
  if (pad < 0) throw std::invalid_argument("pad_input: pad must be >= 0");
  if (pad == 0) return image;
  const int H = image.dim(0), W = image.dim(1);
  TensorT<T> out({H + 2 * pad, W + 2 * pad});
  for (int y = 0; y < H; ++y) {
    std::copy(image.data.begin() + std::size_t(y) * W,
              image.data.begin() + std::size_t(y + 1) * W,
              out.data.begin() + (std::size_t(y + pad) * (W + 2 * pad) + pad));
  }
  return out;
}

namespace {

template <typename T>
ConvSpec layer_spec(const NetworkConfig& c, int i) {
  ConvSpec s;
  s.kernel = c.layer_kernels[std::size_t(i)];
  s.dilation = c.layer_dilations[std::size_t(i)];
  s.in_channels = i == 0 ? c.num_phases : c.channels;
  s.out_channels = i == c.num_layers() - 1 ? c.num_classes * c.num_phases : c.channels;
  return s;
}

template <typename T>
TensorT<T> forward_impl(NetworkParamsT<T>* mut, const NetworkParamsT<T>* cst,
                        const TensorT<T>& input, Mode mode, RngStream rng,
                        ForwardCache<T>* cache) {
  const NetworkParamsT<T>& params = mut ? *mut : *cst;
  const NetworkConfig& c = params.config;
  if (input.ndim() != 4 || input.dim(1) != c.num_phases) {
    throw std::invalid_argument("forward: input must be [N,2,H,W]");
  }
  const int rf = c.receptive_field();
  if (input.dim(2) < rf || input.dim(3) < rf) {
    throw std::invalid_argument("forward: input smaller than the receptive field (" +
                                std::to_string(rf) + ")");
  }
  const int L = c.num_layers();
  if (cache) {
    cache->conv_inputs.resize(std::size_t(L));
    cache->bn.resize(std::size_t(L));
    cache->relu_inputs.resize(std::size_t(L));
    cache->dropout_masks.resize(std::size_t(L));
  }
  TensorT<T> x = input;
  for (int i = 0; i < L; ++i) {
    const ConvSpec spec = layer_spec<T>(c, i);
    if (cache) cache->conv_inputs[std::size_t(i)] = x;
    x = conv2d_batched(x, params.layers[std::size_t(i)].weight,
                       params.layers[std::size_t(i)].bias, spec);
    if (params.layers[std::size_t(i)].has_bn) {
      if (mode == Mode::train) {
        x = batch_norm(x, mut->layers[std::size_t(i)].gamma, mut->layers[std::size_t(i)].beta,
                       mut->layers[std::size_t(i)].bn, Mode::train,
                       cache ? &cache->bn[std::size_t(i)] : nullptr);
      } else {
        x = batch_norm_eval(x, params.layers[std::size_t(i)].gamma,
                            params.layers[std::size_t(i)].beta,
                            params.layers[std::size_t(i)].bn);
      }
    }
    if (i < L - 1) {
      if (cache) cache->relu_inputs[std::size_t(i)] = x;
      x = relu(x);
      DropoutResult<T> dr = dropout(x, c.dropout_rate, mode, rng.derive(std::uint64_t(i)));
      if (cache) cache->dropout_masks[std::size_t(i)] = std::move(dr.mask);
      x = std::move(dr.output);
    }
  }
  if (cache) cache->logits = x;
  return x;
}

}  // namespace

template <typename T>
TensorT<T> forward_batched(NetworkParamsT<T>& params, const TensorT<T>& input, Mode mode,
                           RngStream rng, ForwardCache<T>* cache) {
  return forward_impl<T>(&params, nullptr, input, mode, rng, cache);
}

template <typename T>
TensorT<T> forward_infer(const NetworkParamsT<T>& params, const TensorT<T>& input, Mode mode,
                         RngStream rng) {
  if (mode == Mode::train) throw std::invalid_argument("forward_infer: train mode not allowed");
  return forward_impl<T>(nullptr, &params, input, mode, rng, nullptr);
}

template <typename T>
TensorT<T> forward(const NetworkParamsT<T>& params, const TensorT<T>& ed_slice,
                   const TensorT<T>& es_slice, Mode mode, RngStream rng) {
  if (ed_slice.ndim() != 2 || !ed_slice.same_shape(es_slice)) {
    throw std::invalid_argument("forward: ED/ES slices must be matching [H,W]");
  }
  const int H = ed_slice.dim(0), W = ed_slice.dim(1);
  TensorT<T> input({1, 2, H, W});
  std::copy(ed_slice.data.begin(), ed_slice.data.end(), input.data.begin());
  std::copy(es_slice.data.begin(), es_slice.data.end(),
            input.data.begin() + ed_slice.numel());
  TensorT<T> logits = forward_infer(params, input, mode, rng);
  TensorT<T> out({logits.dim(1), logits.dim(2), logits.dim(3)});
  std::copy(logits.data.begin(), logits.data.end(), out.data.begin());
  return out;
}

template <typename T>
std::vector<LayerGrads<T>> backward_batched(const NetworkParamsT<T>& params,
                                            const ForwardCache<T>& cache,
                                            const TensorT<T>& grad_logits) {
  const NetworkConfig& c = params.config;
  const int L = c.num_layers();
  std::vector<LayerGrads<T>> grads{std::size_t(L)};
  TensorT<T> g = grad_logits;
  for (int i = L - 1; i >= 0; --i) {
    if (i < L - 1) {
      g = dropout_grad(g, cache.dropout_masks[std::size_t(i)], c.dropout_rate);
      g = relu_grad(g, cache.relu_inputs[std::size_t(i)]);
    }
    if (params.layers[std::size_t(i)].has_bn) {
      BatchNormGrads<T> bg =
          batch_norm_grad(g, params.layers[std::size_t(i)].gamma, cache.bn[std::size_t(i)]);
      grads[std::size_t(i)].gamma = std::move(bg.gamma);
      grads[std::size_t(i)].beta = std::move(bg.beta);
      g = std::move(bg.input);
    }
    ConvGrads<T> cg = conv2d_batched_grad(g, cache.conv_inputs[std::size_t(i)],
                                          params.layers[std::size_t(i)].weight,
                                          layer_spec<T>(c, i));
    grads[std::size_t(i)].weight = std::move(cg.weights);
    grads[std::size_t(i)].bias = std::move(cg.bias);
    g = std::move(cg.input);
  }
  return grads;
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

}  // namespace

void save_checkpoint(const std::string& dir, const NetworkParams& params,
                     std::int64_t iteration) {
  fs::create_directories(dir);
  std::ofstream man(fs::path(dir) / "manifest.txt");
  if (!man) throw std::runtime_error("cannot write checkpoint manifest in " + dir);
  man << "iteration = " << iteration << "\n";
  man << "kernels = " << join_ints(params.config.layer_kernels) << "\n";
  man << "dilations = " << join_ints(params.config.layer_dilations) << "\n";
  man << "channels = " << params.config.channels << "\n";
  man << "dropout_rate = " << params.config.dropout_rate << "\n";
  man << "num_classes = " << params.config.num_classes << "\n";
  man << "num_phases = " << params.config.num_phases << "\n";
  man << "expected_receptive_field = " << params.config.expected_receptive_field << "\n";
  man << "layers =";
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    man << " layer" << (i < 10 ? "0" : "") << i;
  }
  man << "\n";

  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const LayerParamsT<float>& l = params.layers[i];
    std::string stem = (fs::path(dir) / ("layer" + std::string(i < 10 ? "0" : "") +
                                         std::to_string(i)))
                           .string();
    write_uqt(stem + ".weight.uqt", l.weight);
    write_uqt(stem + ".bias.uqt", l.bias);
    if (l.has_bn) {
      write_uqt(stem + ".bn_gamma.uqt", l.gamma);
      write_uqt(stem + ".bn_beta.uqt", l.beta);
      write_uqt(stem + ".bn_mean.uqt", l.bn.running_mean);
      write_uqt(stem + ".bn_var.uqt", l.bn.running_var);
    }
  }
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::ifstream man(fs::path(dir) / "manifest.txt");
  if (!man) throw std::runtime_error("missing checkpoint manifest in " + dir);
  Checkpoint ck;
  NetworkConfig& c = ck.params.config;
  std::string line;
  while (std::getline(man, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
    };
    trim(key);
    trim(val);
    if (key == "iteration") ck.iteration = std::stoll(val);
    else if (key == "kernels") c.layer_kernels = split_ints(val);
    else if (key == "dilations") c.layer_dilations = split_ints(val);
    else if (key == "channels") c.channels = std::stoi(val);
    else if (key == "dropout_rate") c.dropout_rate = std::stod(val);
    else if (key == "num_classes") c.num_classes = std::stoi(val);
    else if (key == "num_phases") c.num_phases = std::stoi(val);
    else if (key == "expected_receptive_field") c.expected_receptive_field = std::stoi(val);
  }
  c.validate();

  const int L = c.num_layers();
  for (int i = 0; i < L; ++i) {
    std::string stem = (fs::path(dir) / ("layer" + std::string(i < 10 ? "0" : "") +
                                         std::to_string(i)))
                           .string();
    LayerParamsT<float> l;
    l.weight = read_uqt_f32(stem + ".weight.uqt");
    l.bias = read_uqt_f32(stem + ".bias.uqt");
    l.has_bn = i < L - 1;
    if (l.has_bn) {
      l.gamma = read_uqt_f32(stem + ".bn_gamma.uqt");
      l.beta = read_uqt_f32(stem + ".bn_beta.uqt");
      l.bn.running_mean = read_uqt_f32(stem + ".bn_mean.uqt");
      l.bn.running_var = read_uqt_f32(stem + ".bn_var.uqt");
    }
    const int in_ch = i == 0 ? c.num_phases : c.channels;
    const int out_ch = i == L - 1 ? c.num_classes * c.num_phases : c.channels;
    const int k = c.layer_kernels[std::size_t(i)];
    if (l.weight.dims != std::vector<int>{out_ch, in_ch, k, k}) {
      throw std::runtime_error(dir + ": checkpoint layer " + std::to_string(i) +
                               " shape does not match manifest config");
    }
    ck.params.layers.push_back(std::move(l));
  }
  return ck;
}

#define UNCSEG_INSTANTIATE_NETWORK(T)                                                     \
  template NetworkParamsT<T> build_network<T>(const NetworkConfig&, RngStream);           \
  template TensorT<T> pad_input<T>(const TensorT<T>&, int);                               \
  template TensorT<T> forward_batched<T>(NetworkParamsT<T>&, const TensorT<T>&, Mode,     \
                                         RngStream, ForwardCache<T>*);                    \
  template TensorT<T> forward_infer<T>(const NetworkParamsT<T>&, const TensorT<T>&, Mode, \
                                       RngStream);                                        \
  template TensorT<T> forward<T>(const NetworkParamsT<T>&, const TensorT<T>&,             \
                                 const TensorT<T>&, Mode, RngStream);                     \
  template std::vector<LayerGrads<T>> backward_batched<T>(                                \
      const NetworkParamsT<T>&, const ForwardCache<T>&, const TensorT<T>&);

UNCSEG_INSTANTIATE_NETWORK(float)
UNCSEG_INSTANTIATE_NETWORK(double)

#undef UNCSEG_INSTANTIATE_NETWORK

}  // namespace uncseg
