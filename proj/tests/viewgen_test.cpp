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

#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "conceptseg/viewgen.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace conceptseg {
namespace {

using testing::source_label;

ProbabilityMap point_mass(int h, int w, int x, int y) {
  ProbabilityMap p(h, w);
  std::fill(p.data.begin(), p.data.end(), 0.0);
  p.data[static_cast<std::size_t>(y) * w + x] = 1.0;
  return p;
}

TEST(SampleCenterTest, PointMass) {
  const auto p = point_mass(10, 8, 3, 7);
  for (std::uint64_t s = 0; s < 200; ++s) EXPECT_EQ(sample_center(p, s), (PixelCoord{3, 7}));
}

TEST(SampleCenterTest, TwoCellSupport) {
  ProbabilityMap p(5, 5);
  std::fill(p.data.begin(), p.data.end(), 0.0);
  p.data[6] = p.data[18] = 0.5;
  Rng rng(1);
  int first = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto c = sample_center(p, rng);
    const bool a = c == PixelCoord{1, 1}, b = c == PixelCoord{3, 3};
    ASSERT_TRUE(a || b);
    first += a;
  }
  EXPECT_NEAR(first, 5000, 4 * std::sqrt(2500.0));
}

TEST(SampleCenterTest, UniformPassesChiSquare) {
  const auto p = uniform_probability(8, 8);
  const int cells = 64, draws = 100000;
  std::vector<int> hist(cells, 0);
  Rng rng(42);
  for (int i = 0; i < draws; ++i) {
    const auto c = sample_center(p, rng);
    ++hist[c.y * 8 + c.x];
  }
  const double expected = static_cast<double>(draws) / cells;
  double chi2 = 0.0;
  for (int n : hist) chi2 += (n - expected) * (n - expected) / expected;
  // chi-square with 63 dof: mean 63, sd sqrt(126); accept within 3 sd
  EXPECT_LT(std::abs(chi2 - 63.0), 3.0 * std::sqrt(126.0));
}

TEST(GenViewsTest, SingleViewIdentity) {
  const auto img = testing::random_image(40, 40, 3);
  const auto map = grid_decompose(40, 40, 5);
  ViewConfig cfg;
  cfg.num_views = 1;
  cfg.view_height = cfg.view_width = 16;
  cfg.beta_min = cfg.beta_max = 1.0;
  cfg.max_offset_frac = 0.0;
  cfg.random_flip = false;
  const auto batch = gen_views(img, map, cfg, 9, point_mass(40, 40, 20, 20));
  ASSERT_EQ(batch.views.size(), 1u);
  const Box box{12, 12, 28, 28};
  EXPECT_EQ(batch.views[0].spec.crop_box, box);
  const auto& v = batch.views[0];
  std::set<std::int32_t> labels;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      for (int c = 0; c < 3; ++c) EXPECT_EQ(v.image.at(c, y, x), img.at(c, 12 + y, 12 + x));
      EXPECT_EQ(v.map.at(y, x), map.at(12 + y, 12 + x));
      labels.insert(map.at(12 + y, 12 + x));
    }
  EXPECT_EQ(batch.mutual_region_ids, std::vector<std::int32_t>(labels.begin(), labels.end()));
}

TEST(RenderViewsTest, TwoCropsMatchBruteForceIntersection) {
  const auto map = grid_decompose(8, 8, 2);
  const auto img = testing::random_image(8, 8, 1);
  const std::vector<ViewSpec> specs{make_view_spec(8, 8, 2, 2, 1.0, false, 4, 4),
                                    make_view_spec(8, 8, 4, 3, 1.0, true, 4, 4)};
  const auto batch = render_views(img, map, specs, 1);
  std::set<std::int32_t> a, b, both;
  for (int i = 0; i < 2; ++i) {
    const Box& box = specs[i].crop_box;
    for (int y = box.y0; y < box.y1; ++y)
      for (int x = box.x0; x < box.x1; ++x) (i == 0 ? a : b).insert(map.at(y, x));
  }
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(both, both.end()));
  EXPECT_EQ(batch.mutual_region_ids, std::vector<std::int32_t>(both.begin(), both.end()));
  EXPECT_FALSE(both.empty());
}

TEST(GenViewsTest, FailureNamesImage) {
  const auto img = testing::random_image(32, 32, 3);
  ViewConfig cfg;
  cfg.view_height = cfg.view_width = 16;
  cfg.min_region_pixels = 10000;  // unsatisfiable
  try {
    gen_views(img, grid_decompose(32, 32, 4), cfg, 1, "img_0042");
    FAIL() << "expected ViewGenerationError";
  } catch (const ViewGenerationError& e) {
    EXPECT_NE(std::string(e.what()).find("img_0042"), std::string::npos);
  }
  cfg.min_region_pixels = 4;
  cfg.view_height = cfg.view_width = 128;
  EXPECT_THROW(gen_views(img, grid_decompose(32, 32, 4), cfg, 1), InvalidArgument);
}

// Mutual-region contract, beta range, geometric consistency and flip
// identity over many seeded runs.
TEST(GenViewsTest, PropertiesOverSeeds) {
  const auto img = testing::natural_texture(128, 128, 5);
  const auto map = slic(img, 12);
  const auto pmap = content_probability(img);
  ViewConfig cfg;  // defaults: M=5, 64x64, beta in [0.5, 2]
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto batch = gen_views(img, map, cfg, seed, pmap);
    ASSERT_EQ(batch.views.size(), 5u);
    ASSERT_FALSE(batch.mutual_region_ids.empty());
    const auto& ids = batch.mutual_region_ids;
    ASSERT_TRUE(std::is_sorted(ids.begin(), ids.end()));
    for (const auto& v : batch.views) {
      EXPECT_GE(v.spec.beta, 0.5);
      EXPECT_LE(v.spec.beta, 2.0);
      EXPECT_EQ(v.spec.crop_box.width(), std::lround(v.spec.beta * 64));
      EXPECT_GE(v.spec.crop_box.x0, 0);
      EXPECT_LE(v.spec.crop_box.x1, 128);
      std::map<std::int32_t, int> counts;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          const auto l = v.map.at(y, x);
          if (l == SuperpixelMap::kSentinel) continue;
          ASSERT_TRUE(std::binary_search(ids.begin(), ids.end(), l));
          ASSERT_EQ(l, source_label(map, v.spec, y, x));
          ++counts[l];
        }
      for (auto id : ids) EXPECT_GE(counts[id], cfg.min_region_pixels);
      View twice = v;
      flip_horizontal(twice.image);
      flip_horizontal(twice.map);
      flip_horizontal(twice.image);
      flip_horizontal(twice.map);
      EXPECT_EQ(twice.image, v.image);
      EXPECT_EQ(twice.map, v.map);
    }
    EXPECT_EQ(batch.views[0].image, gen_views(img, map, cfg, seed, pmap).views[0].image);
  }
}

TEST(RestrictTest, Idempotent) {
  const auto img = testing::natural_texture(96, 96, 1);
  auto batch = gen_views(img, slic(img, 10), ViewConfig{}, 3);
  const auto before = batch;
  restrict_to_mutual(batch, 4);
  EXPECT_EQ(batch.mutual_region_ids, before.mutual_region_ids);
  for (std::size_t m = 0; m < batch.views.size(); ++m) EXPECT_EQ(batch.views[m].map, before.views[m].map);
}

TEST(MaskViewsTest, ZeroCoverageIsIdentity) {
  const auto img = testing::natural_texture(96, 96, 2);
  const auto batch = gen_views(img, slic(img, 10), ViewConfig{}, 5);
  const auto masked = mask_views(batch, 0.0, 1);
  for (std::size_t m = 0; m < batch.views.size(); ++m) {
    EXPECT_EQ(masked.views[m].image, batch.views[m].image);
    EXPECT_TRUE(masked.masked_region_ids[m].empty());
  }
}

TEST(MaskViewsTest, FullCoverageOnSingleRegion) {
  const auto img = testing::constant_image(32, 32, 0.5f, 0.5f, 0.5f);
  SuperpixelMap map(32, 32, 0);
  map.region_count = 1;
  ViewConfig cfg;
  cfg.num_views = 2;
  cfg.view_height = cfg.view_width = 16;
  cfg.beta_max = 1.0;
  const auto masked = mask_views(gen_views(img, map, cfg, 1), 1.0, 7);
  for (const auto& v : masked.views) {
    int changed = 0;
    for (float f : v.image.data) {
      EXPECT_GE(f, 0.0f);
      EXPECT_LE(f, 1.0f);
      changed += f != 0.5f;
    }
    EXPECT_GT(changed, static_cast<int>(v.image.data.size()) - 5);  // noise hits 0.5 exactly ~never
    EXPECT_EQ(v.map.labels, std::vector<std::int32_t>(256, 0));
  }
}

TEST(MaskViewsTest, CoverageBoundOverSeeds) {
  const auto img = testing::natural_texture(128, 128, 3);
  const auto map = grid_decompose(128, 128, 20);
  const auto pmap = content_probability(img);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto batch = gen_views(img, map, ViewConfig{}, seed, pmap);
    const auto masked = mask_views(batch, 0.25, seed);
    for (std::size_t m = 0; m < batch.views.size(); ++m) {
      const auto& before = batch.views[m];
      const auto& after = masked.views[m];
      EXPECT_EQ(after.map, before.map);
      // pixel-count oracle: pixels whose value changed, plus mask ids from the label map
      const auto& chosen = masked.masked_region_ids[m];
      int by_label = 0, changed = 0;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          by_label += std::binary_search(chosen.begin(), chosen.end(), before.map.at(y, x));
          bool diff = false;
          for (int c = 0; c < 3; ++c) diff |= after.image.at(c, y, x) != before.image.at(c, y, x);
          changed += diff;
        }
      EXPECT_LE(changed, by_label);
      EXPECT_LE(by_label, 0.25 * 64 * 64);
    }
  }
}

TEST(MaskViewsTest, BudgetIsShareOfPoolablePixels) {
  const auto img = testing::natural_texture(128, 128, 4);
  const auto map = grid_decompose(128, 128, 12);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto batch = gen_views(img, map, ViewConfig{}, seed);
    const auto masked = mask_views(batch, 0.25, seed, 1);
    EXPECT_EQ(masked.views[0].image, batch.views[0].image);
    EXPECT_TRUE(masked.masked_region_ids[0].empty());
    for (std::size_t m = 1; m < batch.views.size(); ++m) {
      const auto& labels = batch.views[m].map.labels;
      const auto& chosen = masked.masked_region_ids[m];
      const auto poolable = std::count_if(labels.begin(), labels.end(), [](auto l) { return l >= 0; });
      const auto hit = std::count_if(labels.begin(), labels.end(), [&](auto l) {
        return std::binary_search(chosen.begin(), chosen.end(), l);
      });
      EXPECT_LE(hit, 0.25 * static_cast<double>(poolable));
      for (auto id : chosen)
        EXPECT_TRUE(std::binary_search(batch.mutual_region_ids.begin(), batch.mutual_region_ids.end(), id));
    }
  }
}

TEST(AppearanceTest, DeterministicAndBounded) {
  const auto img = testing::natural_texture(96, 96, 4);
  const auto batch = gen_views(img, slic(img, 10), ViewConfig{}, 5);
  const auto a = appearance_augment(batch, 0.5, 1.5, 11);
  const auto b = appearance_augment(batch, 0.5, 1.5, 11);
  for (std::size_t m = 0; m < a.views.size(); ++m) {
    EXPECT_EQ(a.views[m].image, b.views[m].image);
    EXPECT_EQ(a.views[m].map, batch.views[m].map);
    for (float f : a.views[m].image.data) {
      EXPECT_GE(f, 0.0f);
      EXPECT_LE(f, 1.0f);
    }
  }
}

}  // namespace
}  // namespace conceptseg
