#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace glgait {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

const char* dtype_name(DType dtype);
DType promote(DType a, DType b);

/// Raised when operand shapes violate an operation's shape rule.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for invalid values (non-finite data, bad hyper-parameters).
class ValueError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Checked mode rejects NaN/Inf at tensor construction. On by default.
void set_checked_mode(bool enabled);
bool checked_mode();

/// Dense row-major tensor. Immutable after construction.
///
/// Storage is always double. An f32 tensor holds values that are exactly
/// representable in single precision: every value is rounded through float
/// when the tensor is built, so f32 results carry f32 precision while the
/// arithmetic that produced them ran in double.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, DType dtype = DType::f64);

  static Tensor zeros(const Shape& shape, DType dtype = DType::f64);
  static Tensor full(const Shape& shape, double value, DType dtype = DType::f64);
  static Tensor scalar(double value, DType dtype = DType::f64);

  bool defined() const { return defined_; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_.size(); }
  DType dtype() const { return dtype_; }

  std::span<const double> data() const { return data_; }
  const double* ptr() const { return data_.data(); }
  double operator[](std::size_t i) const { return data_[i]; }
  double at(std::initializer_list<std::size_t> index) const;
  double item() const;

  Tensor reshape(Shape shape) const;
  Tensor to(DType dtype) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::f64;
  bool defined_ = false;
};

/// Bitwise equality of shape, dtype and every value.
bool bit_equal(const Tensor& a, const Tensor& b);

/// Row-major strides for a shape.
std::vector<std::size_t> strides_of(const Shape& shape);

}  // namespace glgait
