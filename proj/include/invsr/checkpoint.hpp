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

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "invsr/error.hpp"
#include "invsr/nn/params.hpp"
#include "invsr/tensor.hpp"

// Binary layout (all integers little-endian):
//   "IVSR" | u32 version | u32 tensor count
//   per tensor: u16 name length | name bytes | u8 dtype (0 = f32, 1 = f64)
//               | u8 rank | u32 dims[rank] | payload
//   u32 metadata length | metadata JSON bytes
namespace invsr {

inline constexpr std::array<char, 4> kCheckpointMagic{'I', 'V', 'S', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

/// One stored tensor. Values are widened to double, which is exact for f32.
struct StoredTensor {
  std::string name;
  DType dtype = DType::f32;
  Tensor<double> value;
};

struct Checkpoint {
  std::vector<StoredTensor> tensors;
  nlohmann::json meta = nlohmann::json::object();

  template <class T>
  void add(const std::string& prefix, const nn::ParamStore<T>& store) {
    for (const auto& p : store) {
      tensors.push_back({prefix + p.name, std::is_same_v<T, double> ? DType::f64 : DType::f32, p.value.template cast<double>()});
    }
  }

  /// Rebuilds the store whose names start with `prefix`, in stored order.
  template <class T>
  nn::ParamStore<T> extract(const std::string& prefix) const {
    nn::ParamStore<T> out;
    for (const auto& t : tensors)
      if (t.name.rfind(prefix, 0) == 0) out.add(t.name.substr(prefix.size()), t.value.template cast<T>());
    if (out.size() == 0) throw CheckpointError("checkpoint has no tensors under prefix '" + prefix + "'");
    return out;
  }
};

namespace detail {

class ByteWriter {
 public:
  template <class U>
  void put(U v) {
    static_assert(std::is_integral_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes.push_back(std::uint8_t((std::make_unsigned_t<U>(v) >> (8 * i)) & 0xff));
  }
  void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
  void put_f64(double d) { put(std::bit_cast<std::uint64_t>(d)); }
  void put_bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), c, c + n);
  }
  std::vector<std::uint8_t> bytes;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : b_(b) {}
  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    std::make_unsigned_t<U> v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= std::make_unsigned_t<U>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return U(v);
  }
  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw TruncatedError(std::string("checkpoint truncated while reading ") + what);
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic.data(), 4);
  w.put(kCheckpointVersion);
  w.put(std::uint32_t(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    if (t.name.size() > 0xffff) throw CheckpointError("tensor name too long: " + t.name.substr(0, 32));
    w.put(std::uint16_t(t.name.size()));
    w.put_bytes(t.name.data(), t.name.size());
    w.put(std::uint8_t(t.dtype));
    w.put(std::uint8_t(t.value.rank()));
    for (std::size_t d : t.value.shape().dims()) w.put(std::uint32_t(d));
    for (double v : t.value.values()) {
      if (t.dtype == DType::f32)
        w.put_f32(float(v));
      else
        w.put_f64(v);
    }
  }
  const std::string meta = ck.meta.dump();
  w.put(std::uint32_t(meta.size()));
  w.put_bytes(meta.data(), meta.size());
  return std::move(w.bytes);
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic.data(), 4) != 0) throw BadMagicError("not an IVSR checkpoint");
  r.get_string(4, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    const auto len = r.get<std::uint16_t>("name length");
    t.name = r.get_string(len, "name");
    const auto code = r.get<std::uint8_t>("dtype");
    if (code > 1) throw CheckpointError("tensor '" + t.name + "' has unknown dtype code " + std::to_string(code));
    t.dtype = DType(code);
    const auto rank = r.get<std::uint8_t>("rank");
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = r.get<std::uint32_t>("dims");
    Shape shape(dims);
    const std::size_t elem = t.dtype == DType::f32 ? 4 : 8;
    r.need(shape.numel() * elem, "tensor payload");
    Tensor<double> v(shape);
    for (auto& x : v.span()) {
      x = t.dtype == DType::f32 ? double(std::bit_cast<float>(r.get<std::uint32_t>("payload")))
                                : std::bit_cast<double>(r.get<std::uint64_t>("payload"));
    }
    t.value = std::move(v);
    ck.tensors.push_back(std::move(t));
  }
  const auto mlen = r.get<std::uint32_t>("metadata length");
  const std::string meta = r.get_string(mlen, "metadata");
  try {
    ck.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace invsr
