#include "uncseg/io.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace uncseg {

namespace {

constexpr char kMagic[4] = {'U', 'Q', 'T', '1'};
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeU8 = 1;

void put_u32_le(std::ofstream& out, std::uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint32_t get_u32_le(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

void write_header(std::ofstream& out, std::uint8_t dtype, const std::vector<int>& dims) {
  out.write(kMagic, 4);
  out.put(char(dtype));
  out.put(char(dims.size()));
  for (int d : dims) put_u32_le(out, std::uint32_t(d));
}

struct Header {
  std::uint8_t dtype;
  std::vector<int> dims;
};

Header read_header(std::ifstream& in, const std::string& path) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error(path + ": not a UQT1 file");
  }
  Header h;
  h.dtype = std::uint8_t(in.get());
  int ndim = in.get();
  if (ndim <= 0 || ndim > 8) throw std::runtime_error(path + ": bad dimension count");
  h.dims.resize(ndim);
  for (int i = 0; i < ndim; ++i) h.dims[i] = int(get_u32_le(in));
  if (!in) throw std::runtime_error(path + ": truncated header");
  return h;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return in;
}

}  // namespace

void write_uqt(const std::string& path, const Tensor& t) {
  std::ofstream out = open_out(path);
  write_header(out, kDtypeF32, t.dims);
  // f32 payload is written as the in-memory little-endian bytes
  out.write(reinterpret_cast<const char*>(t.data.data()),
            std::streamsize(t.data.size() * sizeof(float)));
  if (!out) throw std::runtime_error("short write to " + path);
}

void write_uqt(const std::string& path, const LabelMap& m) {
  std::ofstream out = open_out(path);
  write_header(out, kDtypeU8, m.dims);
  out.write(reinterpret_cast<const char*>(m.data.data()), std::streamsize(m.data.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

Tensor read_uqt_f32(const std::string& path) {
  std::ifstream in = open_in(path);
  Header h = read_header(in, path);
  if (h.dtype != kDtypeF32) throw std::runtime_error(path + ": expected f32 payload");
  Tensor t(h.dims);
  in.read(reinterpret_cast<char*>(t.data.data()),
          std::streamsize(t.data.size() * sizeof(float)));
  if (!in) throw std::runtime_error(path + ": truncated payload");
  return t;
}

LabelMap read_uqt_u8(const std::string& path) {
  std::ifstream in = open_in(path);
  Header h = read_header(in, path);
  if (h.dtype != kDtypeU8) throw std::runtime_error(path + ": expected u8 payload");
  LabelMap m(h.dims);
  in.read(reinterpret_cast<char*>(m.data.data()), std::streamsize(m.data.size()));
  if (!in) throw std::runtime_error(path + ": truncated payload");
  return m;
}

void write_pgm(const std::string& path, const Tensor& image2d, float lo, float hi) {
  if (image2d.ndim() != 2) throw std::invalid_argument("write_pgm: image must be 2D");
  if (!(hi > lo)) throw std::invalid_argument("write_pgm: need hi > lo");
  std::ofstream out = open_out(path);
  out << "P5\n" << image2d.dim(1) << " " << image2d.dim(0) << "\n255\n";
  const float scale = 255.0f / (hi - lo);
  std::vector<unsigned char> row(size_t(image2d.dim(1)));
  for (int y = 0; y < image2d.dim(0); ++y) {
    for (int x = 0; x < image2d.dim(1); ++x) {
      float v = (image2d(y, x) - lo) * scale;
      v = std::min(255.0f, std::max(0.0f, v));
      row[size_t(x)] = (unsigned char)(v + 0.5f);
    }
    out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace uncseg
