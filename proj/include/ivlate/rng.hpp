#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ivlate {

// SplitMix64 finalizer. Used to derive independent stream seeds from a root
// seed and a counter, so replication r (or unit i) always sees the same
// stream regardless of evaluation order.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t stream_seed(std::uint64_t root, std::uint64_t counter) noexcept {
  return splitmix64(splitmix64(root) ^ splitmix64(counter + 0x632be59bd9b4e019ULL));
}

// xoshiro256** with portable uniform/normal/Rademacher transforms. The
// standard library distributions are implementation-defined, which would
// break byte-level reproducibility across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept {
    std::uint64_t s = seed;
    for (auto& word : state_) {
      s = splitmix64(s);
      word = s;
    }
  }

  Rng(std::uint64_t root, std::uint64_t counter) noexcept : Rng(stream_seed(root, counter)) {}

  std::uint64_t next() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1).
  double uniform_open() noexcept { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  // Box-Muller; the second variate is cached.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * bound) >> 64);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Streams Rademacher signs (+1/-1) 64 at a time.
class RademacherStream {
 public:
  explicit RademacherStream(Rng& rng) noexcept : rng_(rng) {}

  double operator()() noexcept {
    if (remaining_ == 0) {
      bits_ = rng_.next();
      remaining_ = 64;
    }
    const double v = (bits_ & 1U) ? 1.0 : -1.0;
    bits_ >>= 1;
    --remaining_;
    return v;
  }

 private:
  Rng& rng_;
  std::uint64_t bits_ = 0;
  int remaining_ = 0;
};

}  // namespace ivlate
