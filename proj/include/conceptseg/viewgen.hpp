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

// Multi-view generation around a content-weighted anchor point, mutual
// region filtering, and contextual region masking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "conceptseg/error.hpp"
#include "conceptseg/image.hpp"
#include "conceptseg/rng.hpp"
#include "conceptseg/superpixel.hpp"

namespace conceptseg {

struct ViewConfig {
  int num_views = 5;
  int view_height = 64;
  int view_width = 64;
  double beta_min = 0.5;
  double beta_max = 2.0;
  double max_offset_frac = 0.25;  // sampling radius as a fraction of min(H, W)
  bool random_flip = true;
  int retry_limit = 10;
  int min_region_pixels = 4;
};

struct ViewSpec {
  int center_x = 0;
  int center_y = 0;
  double beta = 1.0;
  bool flip = false;
  Box crop_box;
  int view_height = 0;
  int view_width = 0;
};

struct View {
  ImageTensor image;
  SuperpixelMap map;  // source region ids, -1 outside the mutual set
  ViewSpec spec;
};

struct ViewBatch {
  std::vector<View> views;
  std::vector<std::int32_t> mutual_region_ids;  // sorted
  int anchor_x = 0;
  int anchor_y = 0;
  std::vector<std::vector<std::int32_t>> masked_region_ids;  // per view, empty until masked
};

struct PixelCoord {
  int x = 0;
  int y = 0;
  bool operator==(const PixelCoord&) const = default;
};

/// Draws one cell from the categorical distribution given by `pmap`.
inline PixelCoord sample_center(const ProbabilityMap& pmap, Rng& rng) {
  const double u = uniform(rng, 0.0, 1.0);
  double total = 0.0;
  for (double v : pmap.data) total += v;
  const double target = u * total;
  double cum = 0.0;
  std::size_t chosen = pmap.data.size();
  for (std::size_t i = 0; i < pmap.data.size(); ++i) {
    cum += pmap.data[i];
    if (cum > target && pmap.data[i] > 0.0) {
      chosen = i;
      break;
    }
  }
  if (chosen == pmap.data.size()) {  // rounding at the top end: last cell with mass
    for (std::size_t i = pmap.data.size(); i-- > 0;)
      if (pmap.data[i] > 0.0) {
        chosen = i;
        break;
      }
  }
  return {static_cast<int>(chosen % pmap.width), static_cast<int>(chosen / pmap.width)};
}

inline PixelCoord sample_center(const ProbabilityMap& pmap, std::uint64_t seed) {
  Rng rng(seed);
  return sample_center(pmap, rng);
}

/// Crop of side round(beta * view side) centred on (cx, cy), shifted to lie
/// inside an img_h x img_w image.
inline ViewSpec make_view_spec(int img_h, int img_w, int cx, int cy, double beta, bool flip, int view_h,
                               int view_w) {
  ViewSpec s;
  s.center_x = cx;
  s.center_y = cy;
  s.beta = beta;
  s.flip = flip;
  s.view_height = view_h;
  s.view_width = view_w;
  const int ch = static_cast<int>(std::lround(beta * view_h));
  const int cw = static_cast<int>(std::lround(beta * view_w));
  if (ch < 1 || cw < 1 || ch > img_h || cw > img_w)
    throw InvalidArgument("view crop does not fit inside the source image");
  const int x0 = std::clamp(cx - cw / 2, 0, img_w - cw);
  const int y0 = std::clamp(cy - ch / 2, 0, img_h - ch);
  s.crop_box = {x0, y0, x0 + cw, y0 + ch};
  return s;
}

/// Crops, resizes and flips image and map for every spec, then restricts
/// the maps to regions with at least `min_region_pixels` in every view.
inline ViewBatch render_views(const ImageTensor& img, const SuperpixelMap& map, const std::vector<ViewSpec>& specs,
                              int min_region_pixels) {
  if (img.height != map.height || img.width != map.width)
    throw InvalidArgument("render_views: image and superpixel map differ in shape");
  ViewBatch batch;
  batch.views.reserve(specs.size());
  std::unordered_map<std::int32_t, std::vector<int>> counts;
  for (std::size_t m = 0; m < specs.size(); ++m) {
    const ViewSpec& s = specs[m];
    View v;
    v.spec = s;
    v.image = crop_resize_bilinear(img, s.crop_box, s.view_height, s.view_width);
    v.map = SuperpixelMap(s.view_height, s.view_width);
    v.map.region_count = map.region_count;
    for (int y = 0; y < s.view_height; ++y) {
      const int sy = s.crop_box.y0 + nearest_source(y, s.crop_box.height(), s.view_height);
      for (int x = 0; x < s.view_width; ++x) {
        const int sx = s.crop_box.x0 + nearest_source(x, s.crop_box.width(), s.view_width);
        const auto l = map.at(sy, sx);
        v.map.at(y, x) = l;
        auto& c = counts[l];
        if (c.size() < specs.size()) c.resize(specs.size(), 0);
        ++c[m];
      }
    }
    if (s.flip) {
      flip_horizontal(v.image);
      flip_horizontal(v.map);
    }
    batch.views.push_back(std::move(v));
  }
  for (const auto& [id, c] : counts) {
    if (id < 0) continue;
    if (std::all_of(c.begin(), c.end(), [&](int n) { return n >= min_region_pixels; }))
      batch.mutual_region_ids.push_back(id);
  }
  std::sort(batch.mutual_region_ids.begin(), batch.mutual_region_ids.end());
  for (auto& v : batch.views)
    for (auto& l : v.map.labels)
      if (!std::binary_search(batch.mutual_region_ids.begin(), batch.mutual_region_ids.end(), l))
        l = SuperpixelMap::kSentinel;
  batch.masked_region_ids.assign(batch.views.size(), {});
  return batch;
}

/// Regenerates the mutual set from the current view maps and re-applies
/// the sentinel. Idempotent.
inline void restrict_to_mutual(ViewBatch& batch, int min_region_pixels) {
  std::unordered_map<std::int32_t, std::vector<int>> counts;
  const std::size_t M = batch.views.size();
  for (std::size_t m = 0; m < M; ++m)
    for (auto l : batch.views[m].map.labels) {
      if (l < 0) continue;
      auto& c = counts[l];
      if (c.size() < M) c.resize(M, 0);
      ++c[m];
    }
  batch.mutual_region_ids.clear();
  for (const auto& [id, c] : counts)
    if (std::all_of(c.begin(), c.end(), [&](int n) { return n >= min_region_pixels; }))
      batch.mutual_region_ids.push_back(id);
  std::sort(batch.mutual_region_ids.begin(), batch.mutual_region_ids.end());
  for (auto& v : batch.views)
    for (auto& l : v.map.labels)
      if (l >= 0 && !std::binary_search(batch.mutual_region_ids.begin(), batch.mutual_region_ids.end(), l))
        l = SuperpixelMap::kSentinel;
}

/// Samples M crops around a content-weighted anchor and renders them.
/// Throws ViewGenerationError naming `image_id` when no configuration with a
/// mutual region is found within the retry limit.
inline ViewBatch gen_views(const ImageTensor& img, const SuperpixelMap& map, const ViewConfig& cfg,
                           std::uint64_t seed, const ProbabilityMap& pmap, std::string_view image_id = "") {
  if (cfg.num_views < 1) throw InvalidArgument("gen_views: need at least one view");
  if (cfg.beta_min <= 0.0 || cfg.beta_min > cfg.beta_max) throw InvalidArgument("gen_views: invalid beta range");
  const double feasible = std::min(static_cast<double>(img.height) / cfg.view_height,
                                   static_cast<double>(img.width) / cfg.view_width);
  if (std::lround(cfg.beta_min * cfg.view_height) > img.height ||
      std::lround(cfg.beta_min * cfg.view_width) > img.width)
    throw InvalidArgument("gen_views: image " + std::string(image_id) + " too small for the minimum crop");
  const double beta_hi = std::max(cfg.beta_min, std::min(cfg.beta_max, feasible));
  const int radius =
      static_cast<int>(std::lround(cfg.max_offset_frac * std::min(img.height, img.width)));

  Rng rng(seed);
  for (int attempt = 0; attempt < cfg.retry_limit; ++attempt) {
    const PixelCoord anchor = sample_center(pmap, rng);
    std::vector<ViewSpec> specs;
    for (int m = 0; m < cfg.num_views; ++m) {
      const int dx = radius > 0 ? uniform_int(rng, -radius, radius) : 0;
      const int dy = radius > 0 ? uniform_int(rng, -radius, radius) : 0;
      double beta = beta_hi > cfg.beta_min ? uniform(rng, cfg.beta_min, beta_hi) : cfg.beta_min;
      // keep the rounded crop inside the image
      while (std::lround(beta * cfg.view_height) > img.height || std::lround(beta * cfg.view_width) > img.width)
        beta = std::nextafter(beta, 0.0);
      const bool flip = cfg.random_flip && uniform(rng, 0.0, 1.0) < 0.5;
      const int cx = std::clamp(anchor.x + dx, 0, img.width - 1);
      const int cy = std::clamp(anchor.y + dy, 0, img.height - 1);
      specs.push_back(make_view_spec(img.height, img.width, cx, cy, beta, flip, cfg.view_height, cfg.view_width));
    }
    bool overlap = true;
    for (std::size_t a = 0; a < specs.size() && overlap; ++a)
      for (std::size_t b = a + 1; b < specs.size() && overlap; ++b)
        overlap = !intersect(specs[a].crop_box, specs[b].crop_box).empty();
    if (!overlap) continue;
    ViewBatch batch = render_views(img, map, specs, cfg.min_region_pixels);
    if (batch.mutual_region_ids.empty()) continue;
    batch.anchor_x = anchor.x;
    batch.anchor_y = anchor.y;
    return batch;
  }
  throw ViewGenerationError("view generation failed for image '" + std::string(image_id) + "' after " +
                            std::to_string(cfg.retry_limit) + " attempts");
}

inline ViewBatch gen_views(const ImageTensor& img, const SuperpixelMap& map, const ViewConfig& cfg,
                           std::uint64_t seed, std::string_view image_id = "") {
  return gen_views(img, map, cfg, seed, content_probability(img), image_id);
}

/// Replaces randomly chosen regions of each view from `first_view` on with
/// uniform noise until the next region would push coverage above
/// `max_coverage` of the view's poolable (mutual-region) pixels, which is
/// never more than `max_coverage` of all view pixels. Label maps are left
/// unchanged.
inline ViewBatch mask_views(ViewBatch batch, double max_coverage, std::uint64_t seed, std::size_t first_view = 0) {
  if (max_coverage < 0.0 || max_coverage > 1.0) throw InvalidArgument("mask_views: coverage must be in [0,1]");
  batch.masked_region_ids.assign(batch.views.size(), {});
  for (std::size_t m = 0; m < batch.views.size(); ++m) {
    if (m < first_view) continue;
    View& v = batch.views[m];
    Rng rng(derive_seed(seed, {m}));
    std::unordered_map<std::int32_t, std::int64_t> sizes;
    for (auto l : v.map.labels)
      if (l >= 0) ++sizes[l];
    std::vector<std::int32_t> candidates;
    for (auto id : batch.mutual_region_ids)
      if (sizes.count(id)) candidates.push_back(id);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    std::int64_t poolable = 0;
    for (auto& [id, n] : sizes) poolable += n;
    const double budget = max_coverage * static_cast<double>(poolable);
    std::int64_t covered = 0;
    std::vector<std::int32_t> chosen;
    for (auto id : candidates) {
      if (static_cast<double>(covered + sizes[id]) > budget) break;
      covered += sizes[id];
      chosen.push_back(id);
    }
    std::sort(chosen.begin(), chosen.end());
    std::uniform_real_distribution<float> noise(0.0f, 1.0f);
    for (int y = 0; y < v.map.height; ++y)
      for (int x = 0; x < v.map.width; ++x) {
        if (!std::binary_search(chosen.begin(), chosen.end(), v.map.at(y, x))) continue;
        for (int c = 0; c < 3; ++c) v.image.at(c, y, x) = noise(rng);
      }
    batch.masked_region_ids[m] = std::move(chosen);
  }
  return batch;
}

/// Color jitter followed by a Gaussian blur of random sigma, per view.
inline ViewBatch appearance_augment(ViewBatch batch, double color_strength, double max_blur_sigma,
                                    std::uint64_t seed) {
  for (std::size_t m = 0; m < batch.views.size(); ++m) {
    Rng rng(derive_seed(seed, {m}));
    const std::uint64_t color_seed = rng();
    const double sigma = max_blur_sigma > 0.0 ? uniform(rng, 0.0, max_blur_sigma) : 0.0;
    batch.views[m].image = gaussian_blur(color_distort(batch.views[m].image, color_strength, color_seed), sigma);
  }
  return batch;
}

}  // namespace conceptseg
