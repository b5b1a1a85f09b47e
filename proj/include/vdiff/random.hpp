#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "vdiff/tensor.hpp"

namespace vdiff {

/// Seeded random source with its own normal-variate generator, so draws are
/// bit-reproducible regardless of the standard library's distribution
/// implementations. State round-trips exactly through serialize/deserialize.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
  }

  bool coin() { return (engine_() & 1u) != 0; }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Tensor normal_tensor(std::vector<int> shape, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = stddev * normal();
    return t;
  }

  Tensor uniform_tensor(std::vector<int> shape, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
    return t;
  }

  /// Derives an independent child stream; mixing keeps distinct (seed, salt)
  /// pairs from colliding.
  RandomSource fork(std::uint64_t salt) {
    std::uint64_t s = engine_() ^ (0x9E3779B97F4A7C15ull * (salt + 1));
    s ^= s >> 30;
    s *= 0xBF58476D1CE4E5B9ull;
    s ^= s >> 27;
    return RandomSource(s);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_ << " " << (has_spare_ ? 1 : 0) << " ";
    // Spare stored as raw bits so the round trip is exact.
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(spare_));
    std::memcpy(&bits, &spare_, sizeof(bits));
    os << bits;
    return os.str();
  }

  static RandomSource deserialize(const std::string& text) {
    RandomSource r;
    std::istringstream is(text);
    int has = 0;
    std::uint64_t bits = 0;
    is >> r.engine_ >> has >> bits;
    if (!is) throw std::invalid_argument("random source: malformed serialized state");
    r.has_spare_ = has != 0;
    std::memcpy(&r.spare_, &bits, sizeof(bits));
    return r;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vdiff
