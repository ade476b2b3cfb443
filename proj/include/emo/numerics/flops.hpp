#pragma once

#include <atomic>
#include <cstdint>

namespace emo::num {

// Process-wide count of forward arithmetic, incremented once per op with a
// closed-form count (see the cost constants below). Backward passes and
// weight-only preprocessing are not counted.
class FlopCounter {
 public:
  static void add(std::uint64_t n) { total_.fetch_add(n, std::memory_order_relaxed); }
  static std::uint64_t total() { return total_.load(std::memory_order_relaxed); }
  static void reset() { total_.store(0, std::memory_order_relaxed); }

 private:
  static inline std::atomic<std::uint64_t> total_{0};
};

// Counts the FLOPs issued inside a scope.
class FlopScope {
 public:
  FlopScope() : start_(FlopCounter::total()) {}
  std::uint64_t elapsed() const { return FlopCounter::total() - start_; }

 private:
  std::uint64_t start_;
};

namespace cost {
inline constexpr std::uint64_t kElementwise = 1;
inline constexpr std::uint64_t kLayerNorm = 8;   // per element
inline constexpr std::uint64_t kSoftmax = 5;     // per element
inline constexpr std::uint64_t kScanStep = 9;    // per (token, channel, state)

inline constexpr std::uint64_t matmul(std::uint64_t m, std::uint64_t k, std::uint64_t n) {
  return 2 * m * k * n;
}
inline constexpr std::uint64_t dwconv(std::uint64_t len, std::uint64_t d, std::uint64_t width) {
  return (2 * width + 1) * len * d;
}
// Projections for delta (D->1), B and C (D->n), softplus on delta, recurrence.
inline constexpr std::uint64_t selective_scan(std::uint64_t len, std::uint64_t d, std::uint64_t n) {
  return matmul(len, d, 1 + 2 * n) + 2 * len + kScanStep * len * d * n;
}
}  // namespace cost

}  // namespace emo::num
