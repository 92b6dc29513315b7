// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mmfuse/errors.hpp"
#include "mmfuse/tensor.hpp"
#include "mmfuse/tensor_io.hpp"

using namespace mmfuse;

TEST(Tensor, ShapeAndFill) {
  Tensor<float> t({2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.at(1, 2), 1.5f);
  t.fill(0.0f);
  EXPECT_EQ(t[5], 0.0f);
  EXPECT_EQ(shape_str({2, 3}), "[2x3]");
}

TEST(Tensor, ScalarDefault) {
  Tensor<double> t;
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(t.rank(), 0u);
  EXPECT_EQ(Tensor<double>::scalar(2.5).item(), 2.5);
}

TEST(Tensor, DataSizeMismatchThrows) {
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  Tensor<float> t({2, 3});
  EXPECT_THROW(t.reshaped({4}), DimensionError);
  EXPECT_EQ(t.reshaped({3, 2}).shape(), (Shape{3, 2}));
}

TEST(Tensor, FiniteAndDiff) {
  Tensor<double> a({3}, 1.0), b({3}, 1.0);
  b[1] = 1.25;
  EXPECT_DOUBLE_EQ(max_abs_diff(a, b), 0.25);
  EXPECT_TRUE(a.all_finite());
  a[0] = std::nan("");
  EXPECT_FALSE(a.all_finite());
  EXPECT_THROW(max_abs_diff(a, Tensor<double>({2})), DimensionError);
}

TEST(TensorIo, Mmt1RoundTrip) {
  std::mt19937 rng(3);
  std::normal_distribution<float> n;
  Tensor<float> t({4, 5, 3});
  for (auto& v : t.values()) v = n(rng);
  std::stringstream ss;
  write_mmt1(ss, t);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4 + 4 + 3 * 4 + 60 * 4u);
  EXPECT_EQ(bytes.substr(0, 4), "MMT1");
  EXPECT_EQ(read_mmt1(ss), t);
}

TEST(TensorIo, Mmt1RejectsGarbage) {
  std::stringstream bad("NOPE\x01\x00\x00\x00");
  EXPECT_THROW(read_mmt1(bad), DataError);
  std::stringstream truncated;
  write_mmt1(truncated, Tensor<float>({8}, 1.0f));
  std::string s = truncated.str();
  std::stringstream cut(s.substr(0, s.size() - 3));
  EXPECT_THROW(read_mmt1(cut), DataError);
}

TEST(TensorIo, PpmRoundTripThroughLoadImage) {
  const auto dir = std::filesystem::temp_directory_path() / "mmfuse_tensor_io";
  std::filesystem::create_directories(dir);
  Tensor<float> img({2, 3, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i * 13 % 256) / 255.0f;
  save_ppm(dir / "a.ppm", img);
  const Tensor<float> back = load_image(dir / "a.ppm");
  ASSERT_EQ(back.shape(), img.shape());
  EXPECT_LT(max_abs_diff(back, img), 1e-6f);
  save_mmt1(dir / "a.mmt", img);
  EXPECT_EQ(load_image(dir / "a.mmt"), img);
  EXPECT_THROW(load_image(dir / "missing.ppm"), DataError);
}
