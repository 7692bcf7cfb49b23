#include "glgait/flops.hpp"

namespace glgait {

namespace {
thread_local MultiplyCounter* t_counter = nullptr;
thread_local int t_region_depth = 0;
}  // namespace

MultiplyCounter::MultiplyCounter() : previous_(t_counter) { t_counter = this; }
MultiplyCounter::~MultiplyCounter() { t_counter = previous_; }

CountedRegion::CountedRegion() { ++t_region_depth; }
CountedRegion::~CountedRegion() { --t_region_depth; }

void record_multiplies(std::uint64_t n) {
  if (t_counter != nullptr && t_region_depth > 0) t_counter->add(n);
}

}  // namespace glgait
