#pragma once

#include <vector>

#include "glgait/tensor.hpp"

// Tensor-level kernels shared by the differentiable ops.
namespace glgait::kernels {

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b);
Tensor permute(const Tensor& t, const std::vector<std::size_t>& axes);
/// Sums a broadcast result back onto `target` (leading and size-1 axes).
Tensor sum_to_shape(const Tensor& t, const Shape& target);

}  // namespace glgait::kernels
