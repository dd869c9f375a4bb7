#include <gtest/gtest.h>

#include <sstream>

#include "ccrl/rng.hpp"
#include "ccrl/tensor.hpp"

using namespace ccrl;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor<float>(Shape{2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{2, 0}), ShapeError);
  Tensor<float> t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_THROW(t.reshape({4, 2}), ShapeError);
  t.reshape({3, 2});
  EXPECT_EQ(t.dim(0), 3u);
}

TEST(Tensor, ScalarHasOneElement) {
  auto s = Tensor<double>::scalar(2.5);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_EQ(s.item(), 2.5);
}

TEST(TensorBlob, RoundTripRandomShapes) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Shape shape(1 + rng.below(4));
    for (auto& d : shape) d = 1 + rng.below(5);
    Tensor<float> t(shape);
    for (auto& v : t.storage()) v = static_cast<float>(rng.normal());
    std::stringstream ss;
    write_blob(ss, t);
    EXPECT_EQ(read_blob<float>(ss), t);
  }
}

TEST(TensorBlob, HeaderLayout) {
  Tensor<double> t({2, 1}, {1.0, -2.0});
  std::stringstream ss;
  write_blob(ss, t);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 2 * 8 + 1 + 2 * 8);
  EXPECT_EQ(bytes.substr(0, 4), "CCRT");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[8], 2);  // rank
  EXPECT_EQ(bytes[12], 2);
  EXPECT_EQ(bytes[20], 1);
  EXPECT_EQ(bytes[28], 1);  // dtype f64
}

TEST(TensorBlob, ConvertsDtypeOnRead) {
  Tensor<double> t({3}, {0.5, 1.5, -4.0});
  std::stringstream ss;
  write_blob(ss, t);
  auto f = read_blob<float>(ss);
  EXPECT_EQ(f[2], -4.0f);
}

TEST(TensorBlob, RejectsCorruptInput) {
  std::stringstream bad("XXXX");
  EXPECT_THROW(read_blob<float>(bad), FormatError);
  Tensor<float> t({4});
  std::stringstream ss;
  write_blob(ss, t);
  std::string s = ss.str();
  s.resize(s.size() - 3);
  std::stringstream truncated(s);
  EXPECT_THROW(read_blob<float>(truncated), FormatError);
}
