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

#include <cstring>
#include <filesystem>
#include <random>

#include "invsr/checkpoint.hpp"
#include "invsr/nn/networks.hpp"
#include "invsr/rng.hpp"

using namespace invsr;

namespace {

/// Little-endian byte builder for hand-written fixtures.
struct Bytes {
  std::vector<std::uint8_t> b;
  Bytes& raw(const char* s, std::size_t n) {
    b.insert(b.end(), s, s + n);
    return *this;
  }
  Bytes& u8(std::uint8_t v) {
    b.push_back(v);
    return *this;
  }
  Bytes& u16(std::uint16_t v) { return u8(v & 0xff).u8(v >> 8); }
  Bytes& u32(std::uint32_t v) { return u16(v & 0xffff).u16(v >> 16); }
  Bytes& f32(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    return u32(u);
  }
  Bytes& f64(double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    return u32(std::uint32_t(u)).u32(std::uint32_t(u >> 32));
  }
  Bytes& name(const std::string& s) { return u16(std::uint16_t(s.size())).raw(s.data(), s.size()); }
};

/// magic "IVSR", u32 version, u32 count; per tensor: u16 name length, name, u8 dtype (0 f32, 1 f64),
/// u8 rank, u32 dims, values; then u32 metadata length and JSON text.
std::vector<std::uint8_t> three_tensor_fixture() {
  Bytes w;
  w.raw("IVSR", 4).u32(1).u32(3);
  w.name("a").u8(0).u8(1).u32(2).f32(1.5f).f32(-2.0f);
  w.name("net/b").u8(1).u8(2).u32(1).u32(3).f64(0.25).f64(0.5).f64(0.75);
  w.name("c").u8(0).u8(4).u32(1).u32(1).u32(1).u32(1).f32(7.0f);
  const std::string meta = R"({"kind":"fixture"})";
  w.u32(std::uint32_t(meta.size())).raw(meta.data(), meta.size());
  return w.b;
}

TEST(Checkpoint, HandWrittenFixtureParses) {
  const auto ck = decode_checkpoint(three_tensor_fixture());
  ASSERT_EQ(ck.tensors.size(), 3u);
  EXPECT_EQ(ck.tensors[0].name, "a");
  EXPECT_EQ(ck.tensors[0].dtype, DType::f32);
  EXPECT_EQ(ck.tensors[0].value.shape(), (Shape{2}));
  EXPECT_EQ(ck.tensors[0].value[1], -2.0);
  EXPECT_EQ(ck.tensors[1].dtype, DType::f64);
  EXPECT_EQ(ck.tensors[1].value.shape(), (Shape{1, 3}));
  EXPECT_EQ(ck.tensors[1].value[2], 0.75);
  EXPECT_EQ(ck.tensors[2].value.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(ck.meta.at("kind"), "fixture");
  const auto net = ck.extract<double>("net/");
  EXPECT_EQ(net.size(), 1u);
  EXPECT_EQ(net.at("b").value[0], 0.25);
  EXPECT_THROW(ck.extract<float>("missing/"), CheckpointError);
  // encoding reproduces the fixture byte for byte
  EXPECT_EQ(encode_checkpoint(ck), three_tensor_fixture());
}

TEST(Checkpoint, RoundTripRandomStore) {
  nn::DenoiserSpec spec;
  spec.base_channels = 4;
  spec.time_dim = 8;
  spec.groups = 2;
  auto store = nn::init_params<float>(spec, 3);
  std::mt19937_64 rng(1);
  for (auto& p : store) p.value = normal_like<float>(p.value.shape(), rng);
  auto dstore = store.cast<double>();
  Checkpoint ck;
  ck.add("den/", store);
  ck.add("dbl/", dstore);
  ck.meta = {{"iteration", 7}};
  const auto back = decode_checkpoint(encode_checkpoint(ck));
  EXPECT_TRUE(back.extract<float>("den/") == store);
  EXPECT_TRUE(back.extract<double>("dbl/") == dstore);
  EXPECT_EQ(back.meta.at("iteration"), 7);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "invsr_ckpt_test";
  std::filesystem::remove_all(dir);
  Checkpoint ck;
  nn::ParamStore<float> s;
  s.add("x", Tensor<float>(Shape{3}, 0.5f));
  ck.add("", s);
  save_checkpoint(dir / "nested" / "m.ivsr", ck);
  EXPECT_TRUE(load_checkpoint(dir / "nested" / "m.ivsr").extract<float>("") == s);
  EXPECT_THROW(load_checkpoint(dir / "nope.ivsr"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CorruptedMagicRejected) {
  auto b = three_tensor_fixture();
  b[0] = 'X';
  EXPECT_THROW(decode_checkpoint(b), BadMagicError);
  EXPECT_THROW(decode_checkpoint({}), BadMagicError);
}

TEST(Checkpoint, VersionMismatchRejected) {
  auto b = three_tensor_fixture();
  b[4] = 2;
  EXPECT_THROW(decode_checkpoint(b), VersionError);
}

TEST(Checkpoint, TruncationRejectedAtEveryLength) {
  const auto full = three_tensor_fixture();
  for (std::size_t n = 4; n < full.size(); ++n) {
    const std::vector<std::uint8_t> cut(full.begin(), full.begin() + std::ptrdiff_t(n));
    EXPECT_THROW(decode_checkpoint(cut), CheckpointError) << n;
  }
}

TEST(Checkpoint, BadDtypeAndBadMetadataRejected) {
  auto b = three_tensor_fixture();
  b[4 + 4 + 4 + 2 + 1] = 9;  // dtype byte of the first tensor
  EXPECT_THROW(decode_checkpoint(b), CheckpointError);
  auto m = three_tensor_fixture();
  m[m.size() - 1] = '!';  // closing brace of the JSON
  EXPECT_THROW(decode_checkpoint(m), CheckpointError);
}

}  // namespace
