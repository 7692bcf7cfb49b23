#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace glgait {

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t compared = 0;
};

/// Names of the grad-check cases: every primitive op, every attention
/// variant, GLTM, P3D, GL-3D and every loss.
const std::vector<std::string>& gradcheck_case_names();

/// Runs the cases whose name equals `only` (all when empty) on f64 inputs
/// drawn from `seed`. Throws ValueError for an unknown name.
std::vector<GradCheckCase> run_gradcheck_suite(const std::string& only = "", std::uint64_t seed = 0);

inline constexpr double kGradCheckTolerance = 1e-4;

}  // namespace glgait
