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

#include <map>
#include <set>

#include <gtest/gtest.h>

#include "conceptseg/superpixel.hpp"
#include "test_util.hpp"

namespace conceptseg {
namespace {

// Checks every SuperpixelMap invariant by brute force.
void ExpectValidMap(const SuperpixelMap& map, int h, int w) {
  ASSERT_EQ(map.height, h);
  ASSERT_EQ(map.width, w);
  ASSERT_EQ(map.labels.size(), static_cast<std::size_t>(h) * w);
  std::vector<int> seen(map.region_count, 0);
  for (auto l : map.labels) {
    ASSERT_GE(l, 0);
    ASSERT_LT(l, map.region_count);
    seen[l] = 1;
  }
  for (int r = 0; r < map.region_count; ++r) EXPECT_TRUE(seen[r]) << "label " << r << " unused";
  // 4-connectivity: one component per label
  EXPECT_EQ(static_cast<int>(connected_components(map).size.size()), map.region_count);
}

TEST(SlicTest, ConstantImageGivesGrid) {
  const auto img = testing::constant_image(64, 64, 0.5f, 0.2f, 0.7f);
  const auto map = slic(img, 16);
  ExpectValidMap(map, 64, 64);
  EXPECT_EQ(map.region_count, 16);
  for (int by = 0; by < 4; ++by)
    for (int bx = 0; bx < 4; ++bx) {
      std::set<int> labels;
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) labels.insert(map.at(by * 16 + y, bx * 16 + x));
      EXPECT_EQ(labels.size(), 1u) << "block " << by << "," << bx;
    }
}

TEST(SlicTest, LargeImageRegionCountNearGrid) {
  const auto img = testing::natural_texture(512, 512, 7);
  const auto map = slic(img, 20);
  ExpectValidMap(map, 512, 512);
  EXPECT_GE(map.region_count, 0.8 * 625);
  EXPECT_LE(map.region_count, 1.2 * 625);
  EXPECT_LE(map.region_count, 2 * 512 * 512 / (20 * 20));
}

TEST(SlicTest, TwoToneBoundaryAlignment) {
  const auto img = testing::two_tone(96, 64, 32);
  const auto map = slic(img, 32);
  ExpectValidMap(map, 96, 64);
  // brute force: no region may reach more than one column across the split
  for (int r = 0; r < map.region_count; ++r) {
    int min_x = 64, max_x = -1;
    bool left = false, right = false;
    for (int y = 0; y < 96; ++y)
      for (int x = 0; x < 64; ++x)
        if (map.at(y, x) == r) {
          min_x = std::min(min_x, x);
          max_x = std::max(max_x, x);
          (x < 32 ? left : right) = true;
        }
    if (left && right) EXPECT_TRUE(min_x >= 31 || max_x <= 32) << "region " << r;
  }
}

TEST(SlicTest, InvariantsOnRandomInputs) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const int h = 40 + 7 * static_cast<int>(seed), w = 55 - 3 * static_cast<int>(seed);
    const auto img = seed % 2 ? testing::random_image(h, w, seed) : testing::natural_texture(h, w, seed);
    const int s = 5 + static_cast<int>(seed);
    const auto map = slic(img, s);
    ExpectValidMap(map, h, w);
    EXPECT_LE(map.region_count, 2 * h * w / (s * s));
    EXPECT_EQ(map, slic(img, s));  // deterministic
  }
}

TEST(SlicTest, SmallImageIsSingleRegion) {
  const auto map = slic(testing::random_image(10, 30, 1), 16);
  EXPECT_EQ(map.region_count, 1);
  for (auto l : map.labels) EXPECT_EQ(l, 0);
}

TEST(SlicTest, RejectsBadParameters) {
  const auto img = testing::random_image(8, 8, 1);
  EXPECT_THROW(slic(img, 1), InvalidArgument);
  EXPECT_THROW(slic(img, SlicParams{4, 10.0, 0}), InvalidArgument);
}

TEST(GridDecomposeTest, FourByFour) {
  const auto map = grid_decompose(4, 4, 2);
  EXPECT_EQ(map.region_count, 4);
  const std::vector<std::int32_t> expected{0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3};
  EXPECT_EQ(map.labels, expected);
}

TEST(GridDecomposeTest, RaggedEdgeCells) {
  const auto map = grid_decompose(5, 4, 2);
  EXPECT_EQ(map.region_count, 6);
  const auto stats = region_stats(map);
  EXPECT_EQ(stats.counts, (std::vector<std::int64_t>{4, 4, 4, 4, 2, 2}));
}

TEST(GridDecomposeTest, LargeCount) {
  EXPECT_EQ(grid_decompose(512, 512, 20).region_count, 676);
}

TEST(RegionStatsTest, SingleRegion) {
  SuperpixelMap map(6, 3, 0);
  map.region_count = 1;
  const auto s = region_stats(map);
  ASSERT_EQ(s.counts.size(), 1u);
  EXPECT_EQ(s.counts[0], 18);
  EXPECT_EQ(s.boxes[0], (Box{0, 0, 3, 6}));
}

TEST(RegionStatsTest, GridCounts) {
  const auto s = region_stats(grid_decompose(4, 4, 2));
  EXPECT_EQ(s.counts, (std::vector<std::int64_t>(4, 4)));
  EXPECT_EQ(s.boxes[3], (Box{2, 2, 4, 4}));
}

TEST(RegionStatsTest, RandomMapMatchesHistogram) {
  std::mt19937_64 rng(3);
  SuperpixelMap map(13, 17);
  map.region_count = 9;
  for (auto& l : map.labels) l = static_cast<std::int32_t>(rng() % 9);
  const auto s = region_stats(map);
  std::int64_t total = 0;
  for (int r = 0; r < 9; ++r) {
    std::int64_t count = 0;
    int x0 = 99, y0 = 99, x1 = -1, y1 = -1;
    for (int y = 0; y < 13; ++y)
      for (int x = 0; x < 17; ++x)
        if (map.at(y, x) == r) {
          ++count;
          x0 = std::min(x0, x), y0 = std::min(y0, y), x1 = std::max(x1, x + 1), y1 = std::max(y1, y + 1);
        }
    EXPECT_EQ(s.counts[r], count);
    EXPECT_EQ(s.boxes[r], (Box{x0, y0, x1, y1}));
    total += count;
  }
  EXPECT_EQ(total, 13 * 17);
}

TEST(ConnectivityTest, SplitsDisconnectedLabelAndMergesSpecks) {
  // label 0 occupies two separate big blocks, label 1 a one-pixel speck
  SuperpixelMap map(4, 8, 2);
  for (int y = 0; y < 4; ++y) {
    map.at(y, 0) = map.at(y, 1) = 0;
    map.at(y, 6) = map.at(y, 7) = 0;
  }
  map.at(1, 4) = 1;
  map.region_count = 3;
  enforce_connectivity(map, 4);
  EXPECT_EQ(map.region_count, 3);
  EXPECT_NE(map.at(0, 0), map.at(0, 7));
  EXPECT_EQ(map.at(1, 4), map.at(0, 4));
}

TEST(SuperpixelPngTest, RoundTrip) {
  const auto dir = testing::scratch_dir("sp_png");
  const auto map = grid_decompose(300, 300, 1);  // 90000 labels would overflow
  EXPECT_THROW(save_superpixel_png((dir / "x.png").string(), map), InvalidArgument);
  const auto small = slic(testing::natural_texture(60, 80, 2), 6);
  save_superpixel_png((dir / "s.png").string(), small);
  EXPECT_EQ(load_superpixel_png((dir / "s.png").string()), small);
}

}  // namespace
}  // namespace conceptseg
