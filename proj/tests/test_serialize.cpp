#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "glgait/serialize.hpp"
#include "test_util.hpp"

using namespace glgait;
using glgait::test::random_tensor;

namespace {

TensorContainer round_trip(const TensorContainer& c) {
  std::stringstream buf;
  write_container(buf, c);
  return read_container(buf);
}

}  // namespace

TEST(Container, RoundTripIsBitExact) {
  std::mt19937_64 rng(11);
  TensorContainer c;
  c.tensors.emplace_back("a/f64", random_tensor({3, 4, 2}, rng));
  c.tensors.emplace_back("b/f32", random_tensor({5}, rng, -1, 1, DType::f32));
  c.tensors.emplace_back("scalar", Tensor::scalar(-0.0));
  c.tensors.emplace_back("tiny", Tensor({2}, {std::numeric_limits<double>::denorm_min(), 1e300}));
  c.manifest["config"] = R"({"capacity":"B"})";
  c.manifest["empty"] = "";

  auto r = round_trip(c);
  ASSERT_EQ(r.tensors.size(), c.tensors.size());
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    EXPECT_EQ(r.tensors[i].first, c.tensors[i].first);
    EXPECT_TRUE(bit_equal(r.tensors[i].second, c.tensors[i].second)) << c.tensors[i].first;
  }
  EXPECT_TRUE(std::signbit(r.get("scalar").item()));
  EXPECT_EQ(r.manifest, c.manifest);
}

TEST(Container, LayoutIsLittleEndian) {
  TensorContainer c;
  c.tensors.emplace_back("x", Tensor({1}, {1.0}, DType::f32));
  std::stringstream buf;
  write_container(buf, c);
  const std::string bytes = buf.str();
  // magic 4 | version 4 | count 8 | name len 4 | "x" | dtype 1 | rank 4 | extent 8 | value 4 | manifest 8
  ASSERT_EQ(bytes.size(), 4u + 4 + 8 + 4 + 1 + 1 + 4 + 8 + 4 + 8);
  EXPECT_EQ(bytes.substr(0, 4), "GLGT");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1u);
  EXPECT_EQ(bytes[20], 'x');
  EXPECT_EQ(static_cast<unsigned char>(bytes[21]), 0u);  // f32 tag
  // 1.0f = 0x3F800000
  EXPECT_EQ(static_cast<unsigned char>(bytes[34]), 0x00u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[37]), 0x3Fu);
}

TEST(Container, FileRoundTrip) {
  TensorContainer c;
  c.tensors.emplace_back("w", Tensor({2, 2}, {1, 2, 3, 4}));
  const std::string path = ::testing::TempDir() + "glgait_container.bin";
  save_container(path, c);
  auto r = load_container(path);
  EXPECT_TRUE(bit_equal(r.get("w"), c.get("w")));
  EXPECT_FALSE(r.contains("missing"));
  EXPECT_THROW(r.get("missing"), FormatError);
}

TEST(Container, RejectsCorruptInput) {
  std::stringstream bad_magic("XXXX");
  EXPECT_THROW(read_container(bad_magic), FormatError);

  TensorContainer c;
  c.tensors.emplace_back("w", Tensor({3}, {1, 2, 3}));
  std::stringstream buf;
  write_container(buf, c);
  std::string bytes = buf.str();

  std::stringstream truncated(bytes.substr(0, bytes.size() - 12));
  EXPECT_THROW(read_container(truncated), FormatError);

  std::string wrong_version = bytes;
  wrong_version[4] = 9;
  std::stringstream v(wrong_version);
  EXPECT_THROW(read_container(v), FormatError);

  std::string wrong_tag = bytes;
  wrong_tag[21] = 7;
  std::stringstream t(wrong_tag);
  EXPECT_THROW(read_container(t), FormatError);

  EXPECT_THROW(load_container("/nonexistent/dir/file.bin"), FormatError);
}
