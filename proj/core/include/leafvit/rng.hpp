#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace leafvit {

/// Counter-based 64-bit generator: draw i of stream s under seed k is a pure
/// function mix(k, s, i). Distribution transforms are implemented here rather
/// than through <random> so sequences are identical across standard libraries.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : seed_(seed), stream_(stream) {}

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] std::uint64_t stream() const noexcept { return stream_; }
  [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

  /// Independent generator for a sub-stream, e.g. one per epoch or per class.
  [[nodiscard]] CounterRng fork(std::uint64_t stream) const noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal() noexcept;
  /// Normal(0, stddev) resampled until |x| <= 2 stddev.
  double truncated_normal(double stddev) noexcept;
  /// Uniform integer in [0, n), n > 0.
  std::size_t below(std::size_t n) noexcept;

  template <class T>
  void shuffle(std::vector<T>& items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace leafvit
