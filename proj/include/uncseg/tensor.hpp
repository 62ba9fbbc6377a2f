#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace uncseg {

// Dense row-major n-d array. Carries every numeric quantity in the
// project: images, feature maps, weights, probability maps.
template <typename T>
struct TensorT {
  std::vector<int> dims;
  std::vector<T> data;

  TensorT() = default;

  explicit TensorT(std::vector<int> d, T fill = T(0)) : dims(std::move(d)) {
    data.assign(static_cast<std::size_t>(checked_numel(dims)), fill);
  }

  static std::int64_t checked_numel(const std::vector<int>& d) {
    if (d.empty()) throw std::invalid_argument("tensor: need at least one dimension");
    std::int64_t n = 1;
    for (int x : d) {
      if (x <= 0) throw std::invalid_argument("tensor: dimensions must be positive");
      n *= x;
    }
    return n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(dims.size()); }
  int dim(int i) const { return dims[static_cast<std::size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator()(int a) { return data[static_cast<std::size_t>(a)]; }
  const T& operator()(int a) const { return data[static_cast<std::size_t>(a)]; }

  T& operator()(int a, int b) {
    return data[static_cast<std::size_t>(a) * dims[1] + b];
  }
  const T& operator()(int a, int b) const {
    return data[static_cast<std::size_t>(a) * dims[1] + b];
  }

  T& operator()(int a, int b, int c) {
    return data[(static_cast<std::size_t>(a) * dims[1] + b) * dims[2] + c];
  }
  const T& operator()(int a, int b, int c) const {
    return data[(static_cast<std::size_t>(a) * dims[1] + b) * dims[2] + c];
  }

  T& operator()(int a, int b, int c, int d) {
    return data[((static_cast<std::size_t>(a) * dims[1] + b) * dims[2] + c) * dims[3] + d];
  }
  const T& operator()(int a, int b, int c, int d) const {
    return data[((static_cast<std::size_t>(a) * dims[1] + b) * dims[2] + c) * dims[3] + d];
  }

  bool same_shape(const TensorT& other) const { return dims == other.dims; }
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

inline std::string shape_string(const std::vector<int>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

// Ops are required to produce finite values; a NaN or Inf anywhere is a
// bug or divergence and must surface as an error instead of propagating.
template <typename T>
void ensure_finite(const TensorT<T>& t, const char* what) {
  for (const T& v : t.data) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(what) + ": non-finite value produced");
    }
  }
}

template <typename T>
TensorT<T> tensor_cast(const TensorT<float>& t) {
  TensorT<T> out(t.dims);
  for (std::int64_t i = 0; i < t.numel(); ++i) out.data[i] = static_cast<T>(t.data[i]);
  return out;
}

// Hard class assignments. Values are class ids {0=BG, 1=RV, 2=Myo, 3=LV}.
struct LabelMap {
  std::vector<int> dims;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  explicit LabelMap(std::vector<int> d, std::uint8_t fill = 0) : dims(std::move(d)) {
    data.assign(static_cast<std::size_t>(TensorT<float>::checked_numel(dims)), fill);
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(dims.size()); }
  int dim(int i) const { return dims[static_cast<std::size_t>(i)]; }

  std::uint8_t& operator()(int a, int b) {
    return data[static_cast<std::size_t>(a) * dims[1] + b];
  }
  std::uint8_t operator()(int a, int b) const {
    return data[static_cast<std::size_t>(a) * dims[1] + b];
  }
  std::uint8_t& operator()(int a, int b, int c) {
    return data[(static_cast<std::size_t>(a) * dims[1] + b) * dims[2] + c];
  }
  std::uint8_t operator()(int a, int b, int c) const {
    return data[(static_cast<std::size_t>(a) * dims[1] + b) * dims[2] + c];
  }

  bool same_shape(const LabelMap& other) const { return dims == other.dims; }
};

constexpr int kNumClasses = 4;
constexpr int kBackground = 0;
constexpr int kRightVentricle = 1;
constexpr int kMyocardium = 2;
constexpr int kLeftVentricle = 3;

}  // namespace uncseg
