// Copyright 2026 The InvSR-Desk Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "invsr/image_io.hpp"
#include "invsr/rng.hpp"

using namespace invsr;

namespace {

std::vector<std::uint8_t> bytes(const std::string& header, std::initializer_list<int> payload) {
  std::vector<std::uint8_t> b(header.begin(), header.end());
  for (int v : payload) b.push_back(std::uint8_t(v));
  return b;
}

TEST(Ppm, HandWrittenTwoByOne) {
  // row-major pixels, interleaved RGB; tensor layout is [1,3,H,W]
  const auto t = decode_ppm(bytes("P6\n2 1\n255\n", {255, 0, 0, 0, 0, 255}));
  ASSERT_EQ(t.shape(), (Shape{1, 3, 1, 2}));
  EXPECT_EQ(t.at(0, 0, 0, 0), 1.0f);
  EXPECT_EQ(t.at(0, 1, 0, 0), 0.0f);
  EXPECT_EQ(t.at(0, 2, 0, 0), 0.0f);
  EXPECT_EQ(t.at(0, 0, 0, 1), 0.0f);
  EXPECT_EQ(t.at(0, 1, 0, 1), 0.0f);
  EXPECT_EQ(t.at(0, 2, 0, 1), 1.0f);
}

TEST(Ppm, HeaderCommentsAreSkipped) {
  const auto t = decode_ppm(bytes("P6 # made by hand\n1 1\n# another\n255\n", {0, 128, 255}));
  EXPECT_NEAR(t.at(0, 1, 0, 0), 128 / 255.0f, 1e-7);
}

TEST(Ppm, EncodeMatchesFixture) {
  Tensor<float> t(Shape{1, 3, 1, 2});
  t.at(0, 0, 0, 0) = 1;
  t.at(0, 2, 0, 1) = 1;
  EXPECT_EQ(encode_ppm(t), bytes("P6\n2 1\n255\n", {255, 0, 0, 0, 0, 255}));
}

TEST(Ppm, RoundTripWithinHalfQuantum) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor<float> t(Shape{1, 3, 13, 17});
  for (auto& v : t.span()) v = u(rng);
  const auto back = decode_ppm(encode_ppm(t));
  EXPECT_LE(max_abs_diff(back, t), 1.0f / 510.0f + 1e-7f);
  // a second pass is exact
  EXPECT_TRUE(decode_ppm(encode_ppm(back)) == back);
}

TEST(Ppm, TruncatedPayloadIsPayloadError) {
  EXPECT_THROW(decode_ppm(bytes("P6\n2 2\n255\n", {1, 2, 3, 4, 5})), PayloadError);
  EXPECT_THROW(decode_ppm(bytes("P6\n2 2\n255", {})), FormatError);
}

TEST(Ppm, BadHeaders) {
  EXPECT_THROW(decode_ppm(bytes("Q6\n1 1\n255\n", {0, 0, 0})), FormatError);
  EXPECT_THROW(decode_ppm(bytes("P6\nx 1\n255\n", {0, 0, 0})), FormatError);
  EXPECT_THROW(decode_ppm(bytes("P6\n0 1\n255\n", {})), FormatError);
  EXPECT_THROW(decode_ppm(bytes("P3\n1 1\n255\n0 0 0\n", {})), UnsupportedError);
  EXPECT_THROW(decode_ppm(bytes("P6\n1 1\n65535\n", {0, 0, 0, 0, 0, 0})), UnsupportedError);
  EXPECT_THROW(decode_ppm({}), FormatError);
}

TEST(Ppm, EncodeRejectsWrongShape) { EXPECT_THROW(encode_ppm(Tensor<float>(Shape{1, 1, 2, 2})), DimensionError); }

TEST(Ppm, FileRoundTripAndMissingFile) {
  const auto dir = std::filesystem::temp_directory_path() / "invsr_image_io_test";
  std::filesystem::remove_all(dir);
  Tensor<float> t(Shape{1, 3, 4, 4}, 0.5f);
  save_image(t, dir / "sub" / "a.ppm");
  EXPECT_LE(max_abs_diff(load_image(dir / "sub" / "a.ppm"), t), 1.0f / 510.0f + 1e-7f);
  EXPECT_THROW(load_image(dir / "missing.ppm"), IoError);
  std::filesystem::remove_all(dir);
}

}  // namespace
