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

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>

#include "conceptseg/image.hpp"

namespace conceptseg::testing {

// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("conceptseg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline ImageTensor random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImageTensor img(h, w);
  for (float& v : img.data) v = u(rng);
  return img;
}

inline ImageTensor constant_image(int h, int w, float r, float g, float b) {
  ImageTensor img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(0, y, x) = r;
      img.at(1, y, x) = g;
      img.at(2, y, x) = b;
    }
  return img;
}

// Left half color a, right half color b, split at column `split`.
inline ImageTensor two_tone(int h, int w, int split) {
  ImageTensor img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool left = x < split;
      img.at(0, y, x) = left ? 0.9f : 0.1f;
      img.at(1, y, x) = left ? 0.2f : 0.3f;
      img.at(2, y, x) = left ? 0.1f : 0.9f;
    }
  return img;
}

}  // namespace conceptseg::testing

namespace conceptseg::testing {

// Smooth multi-scale color texture, a stand-in for natural image statistics.
inline ImageTensor natural_texture(int h, int w, std::uint64_t seed) {
  ImageTensor img = random_image(h, w, seed);
  ImageTensor coarse = gaussian_blur(random_image(h, w, seed + 1000), 6.0);
  img = gaussian_blur(img, 2.0);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = std::clamp(0.5f + 3.0f * (coarse.data[i] - 0.5f) + 1.5f * (img.data[i] - 0.5f), 0.0f, 1.0f);
  return img;
}

}  // namespace conceptseg::testing
