#include "glgait/tensor.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>

namespace glgait {

namespace {
std::atomic<bool> g_checked{true};
}

const char* dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

DType promote(DType a, DType b) {
  return (a == DType::f64 || b == DType::f64) ? DType::f64 : DType::f32;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

void set_checked_mode(bool enabled) { g_checked = enabled; }
bool checked_mode() { return g_checked; }

Tensor::Tensor(Shape shape, std::vector<double> data, DType dtype)
    : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype), defined_(true) {
  for (auto e : shape_)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape_));
  if (glgait::numel(shape_) != data_.size())
    throw DimensionError("shape " + to_string(shape_) + " needs " +
                         std::to_string(glgait::numel(shape_)) + " values, got " +
                         std::to_string(data_.size()));
  if (dtype_ == DType::f32)
    for (auto& v : data_) v = static_cast<double>(static_cast<float>(v));
  if (g_checked) {
    // Exponent all ones means Inf or NaN; branch-free so the scan vectorizes.
    constexpr std::uint64_t exponent = 0x7FF0000000000000ull;
    std::uint64_t bad = 0;
    for (auto v : data_) bad |= (std::bit_cast<std::uint64_t>(v) & exponent) == exponent;
    if (bad) throw ValueError("non-finite value in tensor of shape " + to_string(shape_));
  }
}

Tensor Tensor::zeros(const Shape& shape, DType dtype) {
  return Tensor(shape, std::vector<double>(glgait::numel(shape), 0.0), dtype);
}

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
  return Tensor(shape, std::vector<double>(glgait::numel(shape), value), dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return Tensor({}, {value}, dtype); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(shape_));
  return shape_[axis];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size())
    throw DimensionError("index rank mismatch for " + to_string(shape_));
  std::size_t offset = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw DimensionError("index out of range for " + to_string(shape_));
    offset = offset * shape_[axis] + i;
    ++axis;
  }
  return data_[offset];
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() needs a single element, shape " + to_string(shape_));
  return data_[0];
}

Tensor Tensor::reshape(Shape shape) const {
  if (glgait::numel(shape) != data_.size())
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(std::move(shape), data_, dtype_);
}

Tensor Tensor::to(DType dtype) const { return Tensor(shape_, data_, dtype); }

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  return std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(double)) == 0;
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

}  // namespace glgait
