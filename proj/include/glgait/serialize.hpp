#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "glgait/tensor.hpp"

namespace glgait {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named tensors plus a text manifest, stored in one little-endian file:
///
///   "GLGT" | u32 version | u64 tensor count
///   per tensor: u32 name length | UTF-8 name | u8 dtype (0 f32, 1 f64)
///               | u32 rank | u64 extents[rank] | raw values
///   u64 manifest count
///   per entry:  u32 key length | key | u64 text length | text
struct TensorContainer {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::map<std::string, std::string> manifest;

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

inline constexpr std::uint32_t kContainerVersion = 1;

void write_container(std::ostream& out, const TensorContainer& container);
TensorContainer read_container(std::istream& in);

void save_container(const std::string& path, const TensorContainer& container);
TensorContainer load_container(const std::string& path);

namespace le {
void put_u8(std::ostream& out, std::uint8_t v);
void put_u32(std::ostream& out, std::uint32_t v);
void put_u64(std::ostream& out, std::uint64_t v);
std::uint8_t get_u8(std::istream& in);
std::uint32_t get_u32(std::istream& in);
std::uint64_t get_u64(std::istream& in);
void put_bytes(std::ostream& out, const std::string& bytes);
std::string get_bytes(std::istream& in, std::size_t n);
}  // namespace le

}  // namespace glgait
