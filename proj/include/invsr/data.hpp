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
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "invsr/degradation.hpp"
#include "invsr/error.hpp"
#include "invsr/image_io.hpp"
#include "invsr/rng.hpp"
#include "invsr/tensor.hpp"

namespace invsr {

enum class TextureKind { checker, gradient, stripes, blobs, rings };

inline constexpr std::array<TextureKind, 5> kTextureKinds = {TextureKind::checker, TextureKind::gradient, TextureKind::stripes,
                                                             TextureKind::blobs, TextureKind::rings};

inline std::string to_string(TextureKind k) {
  switch (k) {
    case TextureKind::checker: return "checker";
    case TextureKind::gradient: return "gradient";
    case TextureKind::stripes: return "stripes";
    case TextureKind::blobs: return "blobs";
    case TextureKind::rings: return "rings";
  }
  return "?";
}

inline TextureKind parse_texture_kind(std::string_view s) {
  for (auto k : kTextureKinds)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown texture kind '" + std::string(s) + "'");
}

namespace detail {

using Color = std::array<double, 3>;

template <class Rng>
Color random_color(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {u(rng), u(rng), u(rng)};
}

/// Two colors differing by at least `min_gap` in some channel.
template <class Rng>
std::pair<Color, Color> contrasting_colors(Rng& rng, double min_gap = 0.35) {
  for (;;) {
    Color a = random_color(rng), b = random_color(rng);
    double gap = 0;
    for (int c = 0; c < 3; ++c) gap = std::max(gap, std::abs(a[c] - b[c]));
    if (gap >= min_gap) return {a, b};
  }
}

inline double smoothstep_edge(double d, double width) { return 0.5 + 0.5 * std::tanh(d / width); }

}  // namespace detail

/// Procedural HR texture [1,3,size,size] in [0,1] with smooth regions and sharp edges.
inline Tensor<float> gen_texture(std::uint64_t seed, std::size_t size, TextureKind kind) {
  if (size == 0 || size % 4) throw ConfigError("texture size must be a positive multiple of 4");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double pi = std::numbers::pi;
  const double S = double(size);
  Tensor<float> img(Shape{1, 3, size, size});
  auto put = [&](std::size_t y, std::size_t x, const detail::Color& c) {
    for (int ch = 0; ch < 3; ++ch) img.at(0, ch, y, x) = float(std::clamp(c[ch], 0.0, 1.0));
  };
  auto mix = [](const detail::Color& a, const detail::Color& b, double t) {
    return detail::Color{a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
  };

  switch (kind) {
    case TextureKind::checker: {
      static constexpr std::array<std::size_t, 3> periods{4, 8, 16};
      const std::size_t p = periods[std::uniform_int_distribution<int>(0, 2)(rng)];
      const std::size_t ox = std::uniform_int_distribution<std::size_t>(0, p - 1)(rng);
      const std::size_t oy = std::uniform_int_distribution<std::size_t>(0, p - 1)(rng);
      const auto [c0, c1] = detail::contrasting_colors(rng);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) put(y, x, (((x + ox) / (p / 2) + (y + oy) / (p / 2)) % 2) ? c1 : c0);
      break;
    }
    case TextureKind::gradient: {
      const double th = u(rng) * 2 * pi, th2 = u(rng) * 2 * pi;
      const double edge_pos = (u(rng) - 0.5) * 0.5 * S;
      const auto [c0, c1] = detail::contrasting_colors(rng);
      const auto [c2, c3] = detail::contrasting_colors(rng);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double px = x - S / 2, py = y - S / 2;
          const double s = std::clamp((px * std::cos(th) + py * std::sin(th)) / S + 0.5, 0.0, 1.0);
          const bool side = px * std::cos(th2) + py * std::sin(th2) > edge_pos;
          put(y, x, side ? mix(c0, c1, s) : mix(c2, c3, s));
        }
      break;
    }
    case TextureKind::stripes: {
      const double th = u(rng) * pi;
      const double period = 6.0 + u(rng) * 14.0;
      const double phase = u(rng) * 2 * pi;
      const double sharp = 1.0 + u(rng) * 7.0;
      const auto [c0, c1] = detail::contrasting_colors(rng);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double d = x * std::cos(th) + y * std::sin(th);
          const double v = 0.5 + 0.5 * std::tanh(sharp * std::sin(2 * pi * d / period + phase)) / std::tanh(sharp);
          put(y, x, mix(c0, c1, v));
        }
      break;
    }
    case TextureKind::blobs: {
      const int smooth = std::uniform_int_distribution<int>(3, 5)(rng);
      const int discs = std::uniform_int_distribution<int>(1, 3)(rng);
      const detail::Color bg = detail::random_color(rng);
      struct Blob {
        double cx, cy, r;
        detail::Color c;
      };
      std::vector<Blob> soft, hard;
      for (int i = 0; i < smooth; ++i) soft.push_back({u(rng) * S, u(rng) * S, (0.1 + 0.25 * u(rng)) * S, detail::random_color(rng)});
      for (int i = 0; i < discs; ++i) {
        const auto [a, b] = detail::contrasting_colors(rng);
        (void)a;
        hard.push_back({u(rng) * S, u(rng) * S, (0.08 + 0.17 * u(rng)) * S, b});
      }
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          detail::Color c = bg;
          for (const auto& b : soft) {
            const double d2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
            c = mix(c, b.c, std::exp(-d2 / (2 * b.r * b.r)));
          }
          for (const auto& b : hard)
            if ((x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy) < b.r * b.r) c = b.c;
          put(y, x, c);
        }
      break;
    }
    case TextureKind::rings: {
      const double cx = (0.2 + 0.6 * u(rng)) * S, cy = (0.2 + 0.6 * u(rng)) * S;
      const double period = 5.0 + u(rng) * 11.0;
      const auto [c0, c1] = detail::contrasting_colors(rng);
      const detail::Color glow = detail::random_color(rng);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double r = std::hypot(x - cx, y - cy);
          const bool band = std::fmod(r, period) < period / 2;
          put(y, x, mix(band ? c0 : c1, glow, 0.3 * std::exp(-r / S)));
        }
      break;
    }
  }
  return img;
}

enum class Split { train, val };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "val"; }

struct ManifestItem {
  std::string id;
  std::optional<TextureKind> kind;  // procedural item
  std::string path;                 // file item when kind is empty
  std::uint64_t seed = 0;
  Split split = Split::train;
};

struct DatasetManifest {
  int version = 1;
  std::uint64_t seed = 0;
  std::size_t size = 64;
  int channels = 3;
  std::vector<ManifestItem> items;

  std::vector<const ManifestItem*> split_items(Split s) const {
    std::vector<const ManifestItem*> out;
    for (const auto& it : items)
      if (it.split == s) out.push_back(&it);
    return out;
  }
};

namespace detail {

inline void assign_splits(std::vector<ManifestItem>& items, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed(seed, "split"));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::size_t(std::llround(fraction * double(items.size())));
  for (std::size_t i = 0; i < order.size(); ++i) items[order[i]].split = i < n_train ? Split::train : Split::val;
}

}  // namespace detail

/// Procedural manifest cycling through texture kinds; split by a seeded shuffle.
inline DatasetManifest make_dataset(std::size_t count, std::size_t size, double split_fraction, std::uint64_t seed) {
  if (count < 2) throw ConfigError("data.count must be at least 2");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("data.split_fraction must lie in (0,1)");
  if (size == 0 || size % 4) throw ConfigError("data.size must be a positive multiple of 4");
  DatasetManifest m;
  m.seed = seed;
  m.size = size;
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "img-%05zu", i);
    m.items.push_back({id, kTextureKinds[i % kTextureKinds.size()], {}, derive_seed(seed, i), Split::train});
  }
  detail::assign_splits(m.items, split_fraction, seed);
  return m;
}

/// Manifest over the *.ppm files of a directory (sorted by name).
inline DatasetManifest make_dataset_from_dir(const std::filesystem::path& dir, std::size_t size, double split_fraction,
                                             std::uint64_t seed) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: '" + dir.string() + "'");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  DatasetManifest m;
  m.seed = seed;
  m.size = size;
  for (std::size_t i = 0; i < files.size(); ++i) {
    m.items.push_back({files[i].stem().string(), std::nullopt, files[i].string(), derive_seed(seed, i), Split::train});
  }
  if (m.items.size() >= 2) detail::assign_splits(m.items, split_fraction, seed);
  return m;
}

/// HR image of an item. File items are center-cropped to the manifest size.
inline Tensor<float> load_item(const DatasetManifest& m, const ManifestItem& it) {
  if (it.kind) return gen_texture(it.seed, m.size, *it.kind);
  Tensor<float> img = load_image(it.path);
  if (img.height() < m.size || img.width() < m.size) {
    throw IoError("image '" + it.path + "' smaller than dataset size " + std::to_string(m.size));
  }
  const std::size_t oy = (img.height() - m.size) / 2, ox = (img.width() - m.size) / 2;
  Tensor<float> out(Shape{1, 3, m.size, m.size});
  for (int c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < m.size; ++y)
      for (std::size_t x = 0; x < m.size; ++x) out.at(0, c, y, x) = img.at(0, c, oy + y, ox + x);
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const DegradationRecord& r) {
  nlohmann::json j{{"scale", r.scale}, {"blur_sigma", r.blur_sigma}, {"noise_sigma", r.noise_sigma}};
  j["jpeg_quality"] = r.jpeg_quality ? nlohmann::json(*r.jpeg_quality) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : m.items) {
    nlohmann::json j{{"id", it.id}, {"seed", it.seed}, {"split", to_string(it.split)}};
    if (it.kind)
      j["kind"] = to_string(*it.kind);
    else
      j["path"] = it.path;
    items.push_back(std::move(j));
  }
  return {{"version", m.version}, {"seed", m.seed}, {"size", m.size}, {"channels", m.channels}, {"items", std::move(items)}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != 1) throw ConfigError("manifest: unsupported version " + std::to_string(m.version));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.size = j.at("size").get<std::size_t>();
    m.channels = j.value("channels", 3);
    std::vector<std::string> ids;
    for (const auto& ji : j.at("items")) {
      ManifestItem it;
      it.id = ji.at("id").get<std::string>();
      it.seed = ji.at("seed").get<std::uint64_t>();
      const auto split = ji.at("split").get<std::string>();
      if (split != "train" && split != "val") throw ConfigError("manifest: item '" + it.id + "' has bad split");
      it.split = split == "train" ? Split::train : Split::val;
      if (ji.contains("kind"))
        it.kind = parse_texture_kind(ji.at("kind").get<std::string>());
      else
        it.path = ji.at("path").get<std::string>();
      ids.push_back(it.id);
      m.items.push_back(std::move(it));
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ConfigError("manifest: duplicate item ids");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
}

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) { write_json(to_json(m), path); }
inline DatasetManifest load_manifest(const std::filesystem::path& path) { return manifest_from_json(read_json(path)); }

}  // namespace invsr
