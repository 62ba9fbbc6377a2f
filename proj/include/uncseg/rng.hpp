#pragma once

#include <cmath>
#include <cstdint>

namespace uncseg {

// SplitMix64 finalizer. Good avalanche, cheap, and stateless.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based random stream. Every draw is a pure function of
// (seed, stream_id, counter), so a copied stream replays the same
// sequence and derived streams are independent of their parent's
// position. This is what makes dropout masks and batch sampling
// reproducible regardless of evaluation order.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  std::uint64_t counter = 0;

  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed_, std::uint64_t stream_id_)
      : seed(seed_), stream_id(stream_id_), base_(mix64(seed_ ^ mix64(stream_id_))) {}

  // Child stream with a fresh counter; chain derive() calls to key a
  // stream by (layer, iteration, sample, ...) tuples.
  RngStream derive(std::uint64_t tag) const {
    return RngStream(seed, mix64(stream_id ^ mix64(tag ^ 0xa0b428db3c01fd5fULL)));
  }

  std::uint64_t next_u64() { return mix64(base_ + counter++); }

  // Uniform in [0, 1), 53 random bits.
  double next_double() {
    return double(next_u64() >> 11) * 0x1.0p-53;
  }

  float next_float() {
    return float(next_u64() >> 40) * 0x1.0p-24f;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform integer in [0, n). Modulo bias is irrelevant at our n.
  std::uint64_t uniform_int(std::uint64_t n) {
    return next_u64() % n;
  }

  // Box-Muller; consumes two uniforms per draw, no cached state.
  double normal() {
    double u1 = 1.0 - next_double();  // (0, 1]
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  // derived from (seed, stream_id) once; draws only fold in the counter
  std::uint64_t base_;
};

}  // namespace uncseg
