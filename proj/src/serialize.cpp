#include "glgait/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace glgait {

namespace le {

void put_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

std::uint8_t get_u8(std::istream& in) {
  char c;
  if (!in.get(c)) throw FormatError("unexpected end of stream");
  return static_cast<std::uint8_t>(c);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("unexpected end of stream");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("unexpected end of stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_bytes(std::ostream& out, const std::string& bytes) {
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string get_bytes(std::istream& in, std::size_t n) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError("unexpected end of stream");
  return s;
}

}  // namespace le

namespace {

constexpr char kMagic[4] = {'G', 'L', 'G', 'T'};
constexpr std::uint32_t kMaxRank = 16;
constexpr std::uint64_t kMaxNameLength = 1 << 16;

}  // namespace

const Tensor& TensorContainer::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("container has no tensor named '" + name + "'");
}

bool TensorContainer::contains(const std::string& name) const {
  for (const auto& entry : tensors)
    if (entry.first == name) return true;
  return false;
}

void write_container(std::ostream& out, const TensorContainer& container) {
  out.write(kMagic, 4);
  le::put_u32(out, kContainerVersion);
  le::put_u64(out, container.tensors.size());
  for (const auto& [name, t] : container.tensors) {
    le::put_u32(out, static_cast<std::uint32_t>(name.size()));
    le::put_bytes(out, name);
    le::put_u8(out, static_cast<std::uint8_t>(t.dtype()));
    le::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) le::put_u64(out, e);
    if (t.dtype() == DType::f32) {
      for (auto v : t.data()) le::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      for (auto v : t.data()) le::put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  le::put_u64(out, container.manifest.size());
  for (const auto& [key, text] : container.manifest) {
    le::put_u32(out, static_cast<std::uint32_t>(key.size()));
    le::put_bytes(out, key);
    le::put_u64(out, text.size());
    le::put_bytes(out, text);
  }
  if (!out) throw FormatError("write failed");
}

TensorContainer read_container(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad container magic");
  const auto version = le::get_u32(in);
  if (version != kContainerVersion) throw FormatError("unsupported container version " + std::to_string(version));
  TensorContainer c;
  const auto count = le::get_u64(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = le::get_u32(in);
    if (name_len > kMaxNameLength) throw FormatError("tensor name too long");
    std::string name = le::get_bytes(in, name_len);
    const auto tag = le::get_u8(in);
    if (tag > 1) throw FormatError("unknown dtype tag " + std::to_string(tag));
    const DType dtype = static_cast<DType>(tag);
    const auto rank = le::get_u32(in);
    if (rank > kMaxRank) throw FormatError("tensor rank too large");
    Shape shape(rank);
    for (auto& e : shape) e = le::get_u64(in);
    std::vector<double> values(numel(shape));
    for (auto& v : values)
      v = dtype == DType::f32 ? static_cast<double>(std::bit_cast<float>(le::get_u32(in)))
                              : std::bit_cast<double>(le::get_u64(in));
    c.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values), dtype));
  }
  const auto entries = le::get_u64(in);
  for (std::uint64_t i = 0; i < entries; ++i) {
    const auto key_len = le::get_u32(in);
    if (key_len > kMaxNameLength) throw FormatError("manifest key too long");
    std::string key = le::get_bytes(in, key_len);
    const auto text_len = le::get_u64(in);
    c.manifest[std::move(key)] = le::get_bytes(in, text_len);
  }
  return c;
}

void save_container(const std::string& path, const TensorContainer& container) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write_container(out, container);
}

TensorContainer load_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_container(in);
}

}  // namespace glgait
