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

// Region decompositions: SLIC superpixels and regular grids.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "conceptseg/error.hpp"
#include "conceptseg/image.hpp"

namespace conceptseg {

/// Per-pixel region index map. Labels are dense in [0, region_count) except
/// for view maps, where -1 marks pixels outside the mutual region set.
struct SuperpixelMap {
  static constexpr std::int32_t kSentinel = -1;

  int height = 0;
  int width = 0;
  int region_count = 0;
  std::vector<std::int32_t> labels;

  SuperpixelMap() = default;
  SuperpixelMap(int h, int w, std::int32_t fill = 0)
      : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  std::int32_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::int32_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return labels.size(); }

  bool operator==(const SuperpixelMap&) const = default;
};

inline void flip_horizontal(SuperpixelMap& map) {
  for (int y = 0; y < map.height; ++y) {
    auto row = map.labels.begin() + static_cast<std::ptrdiff_t>(y) * map.width;
    std::reverse(row, row + map.width);
  }
}

/// Renumbers labels >= 0 densely in order of first appearance (scanline).
inline void relabel_dense(SuperpixelMap& map) {
  std::vector<std::int32_t> remap;
  std::int32_t next = 0;
  for (auto& l : map.labels) {
    if (l < 0) continue;
    if (static_cast<std::size_t>(l) >= remap.size()) remap.resize(l + 1, -1);
    if (remap[l] < 0) remap[l] = next++;
    l = remap[l];
  }
  map.region_count = next;
}

/// Regular tiling with row-major cell indices; edge cells may be smaller.
inline SuperpixelMap grid_decompose(int h, int w, int cell_size) {
  if (cell_size < 1) throw InvalidArgument("grid_decompose: cell_size must be >= 1");
  if (h < 1 || w < 1) throw InvalidArgument("grid_decompose: empty image");
  SuperpixelMap map(h, w);
  const int cols = (w + cell_size - 1) / cell_size;
  const int rows = (h + cell_size - 1) / cell_size;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) map.at(y, x) = (y / cell_size) * cols + x / cell_size;
  map.region_count = rows * cols;
  return map;
}

struct RegionStats {
  std::vector<std::int64_t> counts;
  std::vector<Box> boxes;  // tight, half-open
};

inline RegionStats region_stats(const SuperpixelMap& map) {
  RegionStats s;
  s.counts.assign(map.region_count, 0);
  s.boxes.assign(map.region_count, Box{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), -1, -1});
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      const auto l = map.at(y, x);
      if (l < 0) continue;
      if (l >= map.region_count) throw InvalidArgument("region_stats: label out of range");
      ++s.counts[l];
      Box& b = s.boxes[l];
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x + 1);
      b.y1 = std::max(b.y1, y + 1);
    }
  return s;
}

/// Label of every pixel's 4-connected same-label component, plus sizes.
struct Components {
  std::vector<std::int32_t> id;
  std::vector<std::int64_t> size;
};

inline Components connected_components(const SuperpixelMap& map) {
  Components c;
  c.id.assign(map.size(), -1);
  std::vector<std::size_t> stack;
  const int h = map.height, w = map.width;
  for (std::size_t start = 0; start < map.size(); ++start) {
    if (c.id[start] >= 0) continue;
    const auto cid = static_cast<std::int32_t>(c.size.size());
    const auto label = map.labels[start];
    std::int64_t n = 0;
    c.id[start] = cid;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++n;
      const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
      const std::array<std::array<int, 2>, 4> nb{{{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}}};
      for (auto [yy, xx] : nb) {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
        if (c.id[j] < 0 && map.labels[j] == label) {
          c.id[j] = cid;
          stack.push_back(j);
        }
      }
    }
    c.size.push_back(n);
  }
  return c;
}

/// Splits every label into 4-connected components, merges components below
/// `min_size` into their largest adjacent component, and relabels densely.
inline void enforce_connectivity(SuperpixelMap& map, std::int64_t min_size) {
  auto comps = connected_components(map);
  const std::size_t n = comps.size.size();
  std::vector<std::int32_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<std::int64_t> size = comps.size;
  auto find = [&](std::int32_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  const int h = map.height, w = map.width;
  for (bool changed = true; changed;) {
    changed = false;
    // best neighbour root per small root, chosen by current merged size
    std::vector<std::int32_t> best(n, -1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::int32_t a = find(comps.id[static_cast<std::size_t>(y) * w + x]);
        const std::array<std::array<int, 2>, 2> nb{{{y + 1, x}, {y, x + 1}}};
        for (auto [yy, xx] : nb) {
          if (yy >= h || xx >= w) continue;
          const std::int32_t b = find(comps.id[static_cast<std::size_t>(yy) * w + xx]);
          if (a == b) continue;
          auto consider = [&](std::int32_t small, std::int32_t other) {
            if (size[small] >= min_size) return;
            const std::int32_t cur = best[small];
            if (cur < 0 || size[other] > size[cur] || (size[other] == size[cur] && other < cur)) best[small] = other;
          };
          consider(a, b);
          consider(b, a);
        }
      }
    for (std::size_t r = 0; r < n; ++r) {
      if (best[r] < 0) continue;
      const std::int32_t a = find(static_cast<std::int32_t>(r));
      const std::int32_t b = find(best[r]);
      if (a == b || size[a] >= min_size) continue;
      parent[a] = b;
      size[b] += size[a];
      changed = true;
    }
  }
  for (std::size_t i = 0; i < map.size(); ++i) map.labels[i] = find(comps.id[i]);
  relabel_dense(map);
}

/// sRGB [0,1] to CIELAB (D65 white).
inline std::array<double, 3> rgb_to_lab(double r, double g, double b) {
  auto lin = [](double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); };
  r = lin(r), g = lin(g), b = lin(b);
  const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
  const double y = (0.2126729 * r + 0.7151522 * g + 0.0721750 * b) / 1.00000;
  const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
  auto f = [](double t) { return t > 0.008856 ? std::cbrt(t) : 7.787 * t + 16.0 / 116.0; };
  const double fx = f(x), fy = f(y), fz = f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

struct SlicParams {
  int region_size = 20;
  double compactness = 10.0;
  int iterations = 10;
};

/// SLIC superpixels: grid-seeded local k-means in joint Lab + xy space with
/// a 2S search window, followed by connectivity enforcement.
inline SuperpixelMap slic(const ImageTensor& img, const SlicParams& p = {}) {
  const int S = p.region_size;
  if (S < 2) throw InvalidArgument("slic: region_size must be >= 2");
  if (p.iterations < 1) throw InvalidArgument("slic: iterations must be >= 1");
  const int h = img.height, w = img.width;
  if (h < S || w < S) {
    SuperpixelMap single(h, w, 0);
    single.region_count = 1;
    return single;
  }

  const std::size_t npx = img.plane();
  std::vector<std::array<double, 3>> lab(npx);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      lab[static_cast<std::size_t>(y) * w + x] = rgb_to_lab(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x));
  auto L = [&](int y, int x) -> const std::array<double, 3>& { return lab[static_cast<std::size_t>(y) * w + x]; };
  auto grad = [&](int y, int x) {
    if (x < 1 || y < 1 || x >= w - 1 || y >= h - 1) return std::numeric_limits<double>::infinity();
    double g = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double dx = L(y, x + 1)[c] - L(y, x - 1)[c];
      const double dy = L(y + 1, x)[c] - L(y - 1, x)[c];
      g += dx * dx + dy * dy;
    }
    return g;
  };

  struct Center {
    double l, a, b, x, y;
  };
  const int nx = w / S, ny = h / S;
  std::vector<Center> centers;
  centers.reserve(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      // continuous seed at the cell's pixel-center, snapped to the
      // lowest-gradient pixel of the 3x3 neighbourhood if strictly lower
      const double sx = (i + 0.5) * w / nx - 0.5, sy = (j + 0.5) * h / ny - 0.5;
      const int cx = static_cast<int>(std::lround(sx)), cy = static_cast<int>(std::lround(sy));
      double best = grad(cy, cx);
      int bx = cx, by = cy;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = cx + dx, yy = cy + dy;
          if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
          const double g = grad(yy, xx);
          if (g < best) best = g, bx = xx, by = yy;
        }
      const auto& c = L(by, bx);
      const bool moved = bx != cx || by != cy;
      centers.push_back({c[0], c[1], c[2], moved ? bx : sx, moved ? by : sy});
    }

  const double spatial_weight = (p.compactness / S) * (p.compactness / S);
  std::vector<std::int32_t> label(npx, -1);
  std::vector<double> dist(npx);
  for (int it = 0; it < p.iterations; ++it) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    std::fill(label.begin(), label.end(), -1);
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const Center& c = centers[k];
      const int x0 = std::max(0, static_cast<int>(std::floor(c.x - S)));
      const int x1 = std::min(w - 1, static_cast<int>(std::ceil(c.x + S)));
      const int y0 = std::max(0, static_cast<int>(std::floor(c.y - S)));
      const int y1 = std::min(h - 1, static_cast<int>(std::ceil(c.y + S)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          const auto& v = lab[i];
          const double dl = v[0] - c.l, da = v[1] - c.a, db = v[2] - c.b;
          const double dx = x - c.x, dy = y - c.y;
          const double d = dl * dl + da * da + db * db + spatial_weight * (dx * dx + dy * dy);
          if (d < dist[i]) {  // strict: lower center index wins ties
            dist[i] = d;
            label[i] = static_cast<std::int32_t>(k);
          }
        }
    }
    // pixels no window reached take the spatially nearest center
    for (std::size_t i = 0; i < npx; ++i) {
      if (label[i] >= 0) continue;
      const double x = static_cast<double>(i % w), y = static_cast<double>(i / w);
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const double d = (x - centers[k].x) * (x - centers[k].x) + (y - centers[k].y) * (y - centers[k].y);
        if (d < best) best = d, label[i] = static_cast<std::int32_t>(k);
      }
    }
    std::vector<std::array<double, 6>> acc(centers.size(), {0, 0, 0, 0, 0, 0});
    for (std::size_t i = 0; i < npx; ++i) {
      auto& a = acc[label[i]];
      a[0] += lab[i][0], a[1] += lab[i][1], a[2] += lab[i][2];
      a[3] += static_cast<double>(i % w), a[4] += static_cast<double>(i / w), a[5] += 1.0;
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const auto& a = acc[k];
      if (a[5] == 0.0) continue;
      centers[k] = {a[0] / a[5], a[1] / a[5], a[2] / a[5], a[3] / a[5], a[4] / a[5]};
    }
  }

  SuperpixelMap map(h, w);
  map.labels = std::move(label);
  map.region_count = static_cast<int>(centers.size());
  enforce_connectivity(map, static_cast<std::int64_t>(S) * S / 4);
  return map;
}

inline SuperpixelMap slic(const ImageTensor& img, int region_size, double compactness = 10.0, int iterations = 10) {
  return slic(img, SlicParams{region_size, compactness, iterations});
}

/// Writes the map as a 16-bit grayscale PNG (label = pixel value).
inline void save_superpixel_png(const std::string& path, const SuperpixelMap& map) {
  if (map.region_count > 65535) throw InvalidArgument("too many regions for a 16-bit PNG");
  GrayRaster r{map.height, map.width, std::vector<std::uint16_t>(map.size())};
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map.labels[i] < 0) throw InvalidArgument("cannot serialize sentinel labels");
    r.data[i] = static_cast<std::uint16_t>(map.labels[i]);
  }
  save_gray_png(path, r, true);
}

inline SuperpixelMap load_superpixel_png(const std::string& path) {
  const auto r = load_gray_png(path);
  SuperpixelMap map(r.height, r.width);
  std::int32_t mx = -1;
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    map.labels[i] = r.data[i];
    mx = std::max(mx, map.labels[i]);
  }
  map.region_count = mx + 1;
  return map;
}

}  // namespace conceptseg
