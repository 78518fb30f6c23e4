#pragma once

#include <cstdint>

namespace leafvit {

/// Scalar operation tally for one counted forward pass. One MAC is one
/// multiply-accumulate; reported "FLOPs" in this project are MACs.
struct OpCounter {
  std::uint64_t macs = 0;
  std::uint64_t adds = 0;
  std::uint64_t divs = 0;
  std::uint64_t exps = 0;
};

/// Routes op counts recorded on this thread into `counter` for the lifetime
/// of the scope. Scopes nest; the innermost one receives the counts.
class CountingScope {
 public:
  explicit CountingScope(OpCounter& counter) noexcept;
  ~CountingScope();
  CountingScope(const CountingScope&) = delete;
  CountingScope& operator=(const CountingScope&) = delete;

 private:
  OpCounter* previous_;
};

namespace detail {
OpCounter* active_counter() noexcept;

inline void count_macs(std::uint64_t n) noexcept {
  if (auto* c = active_counter()) c->macs += n;
}
inline void count_adds(std::uint64_t n) noexcept {
  if (auto* c = active_counter()) c->adds += n;
}
inline void count_divs(std::uint64_t n) noexcept {
  if (auto* c = active_counter()) c->divs += n;
}
inline void count_exps(std::uint64_t n) noexcept {
  if (auto* c = active_counter()) c->exps += n;
}
}  // namespace detail

}  // namespace leafvit
