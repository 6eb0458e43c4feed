// Copyright 2026 The conceptseg Authors. All Rights Reserved.
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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "conceptseg/error.hpp"
#include "conceptseg/image.hpp"
#include "conceptseg/rng.hpp"

namespace conceptseg {

inline constexpr std::int32_t kIgnoreLabel = 255;

/// Ground-truth class ids per pixel; kIgnoreLabel marks unlabeled pixels.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> data;

  LabelMap() = default;
  LabelMap(int h, int w, std::int32_t fill = 0) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}
  std::int32_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::int32_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const LabelMap&) const = default;
};

struct Sample {
  std::string id;
  ImageTensor image;
  LabelMap labels;
};

struct Dataset {
  int classes = 0;
  std::vector<Sample> train;
  std::vector<Sample> val;
};

struct SyntheticDatasetSpec {
  int images = 200;
  int image_size = 128;
  int classes = 6;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
};

inline void validate(const SyntheticDatasetSpec& s) {
  if (s.images < 2) throw ConfigError("dataset: need at least 2 images (one per split)");
  if (s.image_size < 32) throw ConfigError("dataset: image_size must be >= 32");
  if (s.classes < 2 || s.classes > 254) throw ConfigError("dataset: classes must be in [2, 254]");
  if (!(s.val_fraction > 0.0 && s.val_fraction < 1.0)) throw ConfigError("dataset: val_fraction must be in (0, 1)");
}

namespace detail {

/// Appearance of one class: a hue band and a procedural texture.
struct ClassStyle {
  double hue = 0.0;
  double saturation = 0.6;
  int texture = 0;
  double period = 8.0;
  double angle = 0.0;
};

inline constexpr int kTextureKinds = 6;

inline std::vector<ClassStyle> class_styles(int classes, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x57}));
  const double hue0 = uniform(rng, 0.0, 1.0);
  std::vector<ClassStyle> out(classes);
  for (int c = 0; c < classes; ++c) {
    auto& s = out[c];
    s.hue = hue0 + static_cast<double>(c) / classes;
    s.saturation = uniform(rng, 0.45, 0.8);
    s.texture = (c + kTextureKinds - 1) % kTextureKinds;  // background gets the flat texture
    s.period = uniform(rng, 5.0, 11.0);
    s.angle = uniform(rng, 0.0, std::numbers::pi);
  }
  return out;
}

/// Texture intensity in [0, 1] at (x, y); `phase` decorrelates instances.
inline double texture_value(const ClassStyle& s, double x, double y, double phase) {
  const double ca = std::cos(s.angle), sa = std::sin(s.angle);
  const double u = (x * ca + y * sa) / s.period + phase, v = (-x * sa + y * ca) / s.period + phase;
  switch (s.texture) {
    case 0:  // stripes
      return 0.5 + 0.5 * std::sin(2 * std::numbers::pi * u);
    case 1:  // checkerboard
      return (static_cast<long>(std::floor(u)) + static_cast<long>(std::floor(v))) % 2 == 0 ? 1.0 : 0.0;
    case 2: {  // dots
      const double du = u - std::round(u), dv = v - std::round(v);
      return du * du + dv * dv < 0.09 ? 1.0 : 0.15;
    }
    case 3:  // egg-crate waves
      return 0.5 + 0.5 * std::sin(2 * std::numbers::pi * u) * std::sin(2 * std::numbers::pi * v);
    case 4:  // fine hatching
      return std::fmod(std::abs(u * 2.0), 1.0) < 0.3 ? 1.0 : 0.3;
    default:  // nearly flat with a soft ripple
      return 0.5 + 0.12 * std::sin(2 * std::numbers::pi * 0.35 * u);
  }
}

}  // namespace detail

/// One synthetic image: class-0 textured background with 3-5 textured
/// shapes (ellipse, rectangle or triangle) of the other classes.
inline Sample synthesize_sample(const SyntheticDatasetSpec& spec, int index) {
  const auto styles = detail::class_styles(spec.classes, spec.seed);
  Rng rng(derive_seed(spec.seed, {0x1, static_cast<std::uint64_t>(index)}));
  const int H = spec.image_size, W = spec.image_size;
  Sample s;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%05d", index);
  s.id = buf;
  s.labels = LabelMap(H, W, 0);
  const int shapes = uniform_int(rng, 3, 5);
  for (int k = 0; k < shapes; ++k) {
    // first shape cycles through the classes so every class appears
    const int cls = k == 0 ? 1 + index % (spec.classes - 1) : uniform_int(rng, 1, spec.classes - 1);
    const int kind = uniform_int(rng, 0, 2);
    const double cx = uniform(rng, 0.15, 0.85) * W, cy = uniform(rng, 0.15, 0.85) * H;
    const double rx = uniform(rng, 0.15, 0.32) * W, ry = uniform(rng, 0.15, 0.32) * H;
    const double rot = uniform(rng, 0.0, std::numbers::pi);
    const double cr = std::cos(rot), sr = std::sin(rot);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double u = (dx * cr + dy * sr) / rx, v = (-dx * sr + dy * cr) / ry;
        bool inside = false;
        if (kind == 0) inside = u * u + v * v <= 1.0;
        else if (kind == 1) inside = std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
        else inside = v <= 0.8 && v >= -1.0 + 1.8 * std::abs(u);
        if (inside) s.labels.at(y, x) = cls;
      }
  }
  // per-instance jitter of hue, value and texture phase
  std::vector<double> dhue(spec.classes), phase(spec.classes), gain(spec.classes);
  for (int c = 0; c < spec.classes; ++c) {
    dhue[c] = uniform(rng, -0.04, 0.04);
    phase[c] = uniform(rng, 0.0, 1.0);
    gain[c] = uniform(rng, 0.85, 1.1);
  }
  // smooth illumination and hue drift across the image, so regions of one
  // class differ consistently rather than being interchangeable
  double fx[2], fy[2], ph[2];
  for (int i = 0; i < 2; ++i) {
    fx[i] = uniform(rng, 0.5, 1.5) * 2 * std::numbers::pi / W;
    fy[i] = uniform(rng, 0.5, 1.5) * 2 * std::numbers::pi / H;
    ph[i] = uniform(rng, 0.0, 2 * std::numbers::pi);
  }
  std::normal_distribution<double> noise(0.0, 0.02);
  s.image = ImageTensor(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int c = s.labels.at(y, x);
      const auto& st = styles[c];
      const double t = detail::texture_value(st, x, y, phase[c]);
      const double light = 0.9 + 0.2 * std::sin(fx[0] * x + fy[0] * y + ph[0]);
      const double drift = 0.05 * std::sin(fx[1] * x - fy[1] * y + ph[1]);
      const auto rgb = hsv_to_rgb(st.hue + dhue[c] + drift, st.saturation,
                                  std::clamp((0.3 + 0.55 * t) * gain[c] * light, 0.0, 1.0));
      for (int ch = 0; ch < 3; ++ch)
        s.image.at(ch, y, x) = static_cast<float>(std::clamp(rgb[ch] + noise(rng), 0.0, 1.0));
    }
  return s;
}

namespace detail {

inline GrayRaster to_raster(const LabelMap& l) {
  GrayRaster r;
  r.height = l.height;
  r.width = l.width;
  r.data.assign(l.data.begin(), l.data.end());
  return r;
}

}  // namespace detail

/// Writes images/, labels/ and manifest.json under `dir`. Images are
/// quantized to 8 bits on disk. Deterministic per spec.
inline void write_synthetic_dataset(const std::string& dir, const SyntheticDatasetSpec& spec) {
  validate(spec);
  namespace fs = std::filesystem;
  try {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "labels");
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("cannot create dataset directory: ") + e.what());
  }
  const int val = std::max(1, static_cast<int>(std::lround(spec.val_fraction * spec.images)));
  const int train = spec.images - val;
  if (train < 1) throw ConfigError("dataset: val_fraction leaves no training images");
  nlohmann::ordered_json manifest;
  manifest["format"] = "conceptseg-dataset";
  manifest["version"] = 1;
  manifest["classes"] = spec.classes;
  manifest["image_size"] = spec.image_size;
  manifest["seed"] = spec.seed;
  manifest["ignore_label"] = kIgnoreLabel;
  manifest["train"] = nlohmann::ordered_json::array();
  manifest["val"] = nlohmann::ordered_json::array();
  for (int i = 0; i < spec.images; ++i) {
    const Sample s = synthesize_sample(spec, i);
    save_png((fs::path(dir) / "images" / (s.id + ".png")).string(), s.image);
    save_gray_png((fs::path(dir) / "labels" / (s.id + ".png")).string(), detail::to_raster(s.labels), false);
    manifest[i < train ? "train" : "val"].push_back(s.id);
  }
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("cannot write manifest in " + dir);
}

inline Sample load_sample(const std::string& dir, const std::string& id, int classes) {
  namespace fs = std::filesystem;
  Sample s;
  s.id = id;
  s.image = load_image((fs::path(dir) / "images" / (id + ".png")).string());
  const auto raster = load_gray_png((fs::path(dir) / "labels" / (id + ".png")).string());
  if (raster.height != s.image.height || raster.width != s.image.width)
    throw DataError("label map of '" + id + "' does not match its image size");
  s.labels = LabelMap(raster.height, raster.width);
  for (std::size_t i = 0; i < raster.data.size(); ++i) {
    const std::int32_t v = raster.data[i];
    if (v >= classes && v != kIgnoreLabel) throw DataError("label map of '" + id + "' has invalid class id " + std::to_string(v));
    s.labels.data[i] = v;
  }
  return s;
}

/// Loads the splits listed in `dir`/manifest.json.
inline Dataset load_dataset(const std::string& dir, bool want_train = true, bool want_val = true) {
  namespace fs = std::filesystem;
  const fs::path mpath = fs::path(dir) / "manifest.json";
  if (!fs::exists(mpath)) throw DataError("dataset manifest not found: " + mpath.string());
  nlohmann::json m;
  try {
    std::ifstream in(mpath);
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed dataset manifest " + mpath.string() + ": " + e.what());
  }
  Dataset d;
  try {
    d.classes = m.at("classes").get<int>();
    if (d.classes < 2) throw DataError("dataset manifest: need at least 2 classes");
    for (const char* split : {"train", "val"}) {
      const bool want = std::string(split) == "train" ? want_train : want_val;
      if (!want) continue;
      if (!m.contains(split) || m.at(split).empty())
        throw DataError(std::string("dataset is missing the '") + split + "' split");
      auto& out = std::string(split) == "train" ? d.train : d.val;
      for (const auto& id : m.at(split)) out.push_back(load_sample(dir, id.get<std::string>(), d.classes));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed dataset manifest " + mpath.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw DataError(std::string("dataset file problem: ") + e.what());
  }
  return d;
}

/// Fraction of labeled pixels per class.
inline std::vector<double> class_frequencies(const std::vector<Sample>& samples, int classes) {
  std::vector<double> f(classes, 0.0);
  double total = 0;
  for (const auto& s : samples)
    for (auto l : s.labels.data)
      if (l >= 0 && l < classes) f[l] += 1, total += 1;
  if (total > 0)
    for (auto& v : f) v /= total;
  return f;
}

}  // namespace conceptseg
