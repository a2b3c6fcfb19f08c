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

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "invsr/error.hpp"
#include "invsr/tensor.hpp"

namespace invsr {

namespace detail {

class PpmHeaderReader {
 public:
  explicit PpmHeaderReader(const std::vector<std::uint8_t>& bytes) : b_(bytes) {}

  long next_int(const char* what) {
    skip_space_and_comments();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) throw FormatError(std::string("ppm: expected ") + what);
    long v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > 1'000'000'000) throw FormatError(std::string("ppm: ") + what + " too large");
    }
    return v;
  }

  /// Exactly one whitespace byte separates the header from the payload.
  std::size_t payload_start() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw FormatError("ppm: missing separator after maxval");
    return pos_ + 1;
  }

  std::size_t pos_ = 0;

 private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }
  const std::vector<std::uint8_t>& b_;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Decodes binary PPM (P6, maxval 255) into a [1,3,H,W] tensor in [0,1].
inline Tensor<float> decode_ppm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw FormatError("ppm: missing magic");
  if (bytes[1] != '6') throw UnsupportedError(std::string("ppm: only binary P6 is supported, got P") + char(bytes[1]));
  detail::PpmHeaderReader r(bytes);
  r.pos_ = 2;
  const long w = r.next_int("width");
  const long h = r.next_int("height");
  const long maxval = r.next_int("maxval");
  if (w <= 0 || h <= 0) throw FormatError("ppm: non-positive dimensions");
  if (maxval <= 0 || maxval > 65535) throw FormatError("ppm: maxval out of range");
  if (maxval != 255) throw UnsupportedError("ppm: only 8-bit (maxval 255) images are supported");
  const std::size_t start = r.payload_start();
  const std::size_t need = std::size_t(w) * std::size_t(h) * 3;
  if (bytes.size() - start < need) {
    throw PayloadError("ppm: payload has " + std::to_string(bytes.size() - start) + " bytes, expected " + std::to_string(need));
  }
  Tensor<float> t(Shape{1, 3, std::size_t(h), std::size_t(w)});
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = bytes[start + (std::size_t(y) * w + x) * 3 + c] / 255.0f;
  return t;
}

inline std::vector<std::uint8_t> encode_ppm(const Tensor<float>& img) {
  require_rank4(img.shape(), "encode_ppm");
  if (img.batch() != 1 || img.channels() != 3) throw DimensionError("encode_ppm: expects [1,3,H,W], got " + img.shape().str());
  const std::string header = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.size());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(0, c, y, x), 0.0f, 1.0f);
        out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
      }
  return out;
}

inline Tensor<float> load_image(const std::filesystem::path& path) { return decode_ppm(detail::read_file(path)); }

inline void save_image(const Tensor<float>& img, const std::filesystem::path& path) {
  const auto bytes = encode_ppm(img);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace invsr
