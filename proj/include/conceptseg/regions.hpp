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

// Region trees: per (image n, view m, region id) payloads built from dense
// embedding maps and superpixel view maps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "conceptseg/encoder.hpp"
#include "conceptseg/error.hpp"
#include "conceptseg/superpixel.hpp"

namespace conceptseg {

template <typename Payload>
struct RegionNode {
  std::int32_t id = 0;
  Payload payload;
};

/// Depth-3 index n -> m -> region id, with nodes sorted by id under each
/// (n, m). Backed by a flat array of N*M node lists.
template <typename Payload>
class RegionTree {
 public:
  RegionTree() = default;
  RegionTree(int images, int views)
      : images_(images), views_(views), nodes_(static_cast<std::size_t>(images) * views) {}

  int images() const { return images_; }
  int views() const { return views_; }

  std::vector<RegionNode<Payload>>& at(int n, int m) { return nodes_[index(n, m)]; }
  const std::vector<RegionNode<Payload>>& at(int n, int m) const { return nodes_[index(n, m)]; }

  int region_count(int n, int m) const { return static_cast<int>(at(n, m).size()); }

  const Payload* find(int n, int m, std::int32_t id) const {
    const auto& v = at(n, m);
    auto it = std::lower_bound(v.begin(), v.end(), id, [](const auto& node, std::int32_t k) { return node.id < k; });
    return it != v.end() && it->id == id ? &it->payload : nullptr;
  }

  std::vector<std::int32_t> ids(int n, int m) const {
    std::vector<std::int32_t> out;
    for (const auto& node : at(n, m)) out.push_back(node.id);
    return out;
  }

 private:
  std::size_t index(int n, int m) const {
    if (n < 0 || n >= images_ || m < 0 || m >= views_) throw InvalidArgument("region tree index out of range");
    return static_cast<std::size_t>(n) * views_ + m;
  }
  int images_ = 0;
  int views_ = 0;
  std::vector<std::vector<RegionNode<Payload>>> nodes_;
};

/// Pixel members of one region and their embedding vectors (count x D).
struct RegionPixels {
  std::vector<std::int32_t> pixels;
  std::vector<double> vectors;
  int dim = 0;
  std::size_t count() const { return pixels.size(); }
};

/// Renormalized region mean; `mean_norm` is the length before renormalizing.
struct PooledRegion {
  std::vector<double> mean;
  double mean_norm = 0.0;
  std::size_t count = 0;
};

using EmbeddingTree = RegionTree<RegionPixels>;
using MeanTree = RegionTree<PooledRegion>;
using ScoreTree = RegionTree<std::vector<double>>;

/// Groups the pixel vectors of `emb` by region label into tree(n, m).
/// Sentinel pixels are discarded.
template <typename T>
void build_tree(const EmbeddingMap<T>& emb, const SuperpixelMap& map, int n, int m, EmbeddingTree& tree) {
  if (emb.height != map.height || emb.width != map.width)
    throw InvalidArgument("build_tree: embedding and region map differ in shape");
  const int D = emb.channels;
  std::map<std::int32_t, RegionPixels> groups;
  for (std::size_t j = 0; j < map.size(); ++j) {
    const auto l = map.labels[j];
    if (l < 0) continue;
    auto& g = groups[l];
    g.dim = D;
    g.pixels.push_back(static_cast<std::int32_t>(j));
  }
  auto& out = tree.at(n, m);
  out.clear();
  out.reserve(groups.size());
  const std::size_t plane = emb.plane();
  for (auto& [id, g] : groups) {
    g.vectors.resize(g.pixels.size() * D);
    for (std::size_t r = 0; r < g.pixels.size(); ++r)
      for (int d = 0; d < D; ++d) g.vectors[r * D + d] = static_cast<double>(emb.data[d * plane + g.pixels[r]]);
    out.push_back({id, std::move(g)});
  }
}

inline constexpr double kDegenerateMeanNorm = 1e-6;

inline PooledRegion pool_region(const RegionPixels& r) {
  PooledRegion p;
  p.count = r.count();
  p.mean.assign(r.dim, 0.0);
  for (std::size_t k = 0; k < r.count(); ++k)
    for (int d = 0; d < r.dim; ++d) p.mean[d] += r.vectors[k * r.dim + d];
  double sq = 0.0;
  for (double& v : p.mean) {
    v /= static_cast<double>(r.count());
    sq += v * v;
  }
  p.mean_norm = std::sqrt(sq);
  if (p.mean_norm >= kDegenerateMeanNorm)
    for (double& v : p.mean) v /= p.mean_norm;
  return p;
}

/// Unit-length region means. A region whose raw mean is shorter than 1e-6
/// is dropped from every view of its image.
inline MeanTree pool_means(const EmbeddingTree& tree) {
  MeanTree out(tree.images(), tree.views());
  for (int n = 0; n < tree.images(); ++n) {
    std::set<std::int32_t> dropped;
    for (int m = 0; m < tree.views(); ++m)
      for (const auto& node : tree.at(n, m)) {
        PooledRegion p = pool_region(node.payload);
        if (p.mean_norm < kDegenerateMeanNorm) dropped.insert(node.id);
        out.at(n, m).push_back({node.id, std::move(p)});
      }
    if (dropped.empty()) continue;
    for (int m = 0; m < tree.views(); ++m)
      std::erase_if(out.at(n, m), [&](const auto& node) { return dropped.count(node.id) > 0; });
  }
  return out;
}

}  // namespace conceptseg
