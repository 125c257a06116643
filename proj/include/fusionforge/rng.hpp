#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

namespace fusionforge {

/// xoshiro256** (Blackman & Vigna, 2018) seeded by four splitmix64 outputs.
///
/// Every derived draw is defined here rather than through <random>
/// distributions, whose algorithms are implementation-specific. Ports that
/// follow these definitions reproduce the same streams:
///   uniform()      = (next() >> 11) * 2^-53                  in [0, 1)
///   exponential()  = -log1p(-uniform())                      mean 1
///   index(n)       = Lemire multiply-shift with rejection    in [0, n)
///   shuffle(v)     = Fisher-Yates from the back, j = index(i + 1)
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double exponential();
  std::size_t index(std::size_t n);

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = index(i);
      std::swap(values[i - 1], values[j]);
    }
  }

  // Independent child stream; `stream` selects which one.
  Rng fork(std::uint64_t stream);

 private:
  std::array<std::uint64_t, 4> s_{};
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace fusionforge
