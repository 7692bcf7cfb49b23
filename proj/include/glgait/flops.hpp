#pragma once

#include <cstdint>

namespace glgait {

/// Per-thread multiply accumulator. While alive, matmuls executed inside a
/// CountedRegion on the same thread add their real-multiply count to it.
/// Counters nest; the innermost one receives the counts.
class MultiplyCounter {
 public:
  MultiplyCounter();
  ~MultiplyCounter();
  MultiplyCounter(const MultiplyCounter&) = delete;
  MultiplyCounter& operator=(const MultiplyCounter&) = delete;

  std::uint64_t count() const { return count_; }
  void add(std::uint64_t n) { count_ += n; }

 private:
  std::uint64_t count_ = 0;
  MultiplyCounter* previous_;
};

/// Marks the code path whose multiplies are attributed to the active counter
/// (attention score and apply products).
class CountedRegion {
 public:
  CountedRegion();
  ~CountedRegion();
  CountedRegion(const CountedRegion&) = delete;
  CountedRegion& operator=(const CountedRegion&) = delete;
};

void record_multiplies(std::uint64_t n);

}  // namespace glgait
