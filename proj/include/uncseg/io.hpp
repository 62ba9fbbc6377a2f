#pragma once

#include <string>

#include "uncseg/tensor.hpp"

namespace uncseg {

// UQT1 tensor container: magic "UQT1", u8 dtype (0 = f32, 1 = u8),
// u8 ndim, ndim x u32 little-endian dims, then the raw row-major
// payload. Used for weights, images, labels and maps.
void write_uqt(const std::string& path, const Tensor& t);
void write_uqt(const std::string& path, const LabelMap& m);

Tensor read_uqt_f32(const std::string& path);
LabelMap read_uqt_u8(const std::string& path);

// Binary 8-bit PGM with values scaled linearly from [lo, hi] to [0, 255].
void write_pgm(const std::string& path, const Tensor& image2d, float lo, float hi);

}  // namespace uncseg
