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


#include "conceptseg/config.hpp"

#include <gtest/gtest.h>

#include <set>

namespace conceptseg {
namespace {

TEST(ConfigTest, TextRoundTripsEveryField) {
  RunConfig a;
  a.seed = 17;
  a.data = "data dir";
  a.train.base_lr = 0.0375;
  a.train.decomposition = Decomposition::kGrid;
  a.train.lars = true;
  a.eval.mode = EvalMode::kLinear;
  a.eval.clusters = 9;
  a.dataset.val_fraction = 0.3;
  const auto text = to_config_text(a);
  RunConfig b;
  apply_config_text(b, text);
  EXPECT_EQ(to_config_text(b), text);
  EXPECT_EQ(b.seed, 17u);
  EXPECT_EQ(b.data, "data dir");
  EXPECT_EQ(b.train.base_lr, 0.0375);
  EXPECT_EQ(b.train.decomposition, Decomposition::kGrid);
  EXPECT_TRUE(b.train.lars);
  EXPECT_EQ(b.eval.mode, EvalMode::kLinear);
  EXPECT_EQ(b.eval.clusters, 9);
}

TEST(ConfigTest, RealsPrintShortest) {
  RunConfig c;
  c.train.temperature = 0.1;
  const auto text = to_config_text(c);
  EXPECT_NE(text.find("temperature = 0.1\n"), std::string::npos) << text;
}

TEST(ConfigTest, FieldNamesAreUnique) {
  std::set<std::string> names;
  for (const auto& f : config_fields()) EXPECT_TRUE(names.insert(f.name()).second) << f.name();
  EXPECT_TRUE(names.count("seed"));
  EXPECT_TRUE(names.count("train.mask_coverage"));
  EXPECT_TRUE(names.count("eval.clusters"));
}

TEST(ConfigTest, CommentsBlankLinesAndRunSection) {
  RunConfig c;
  apply_config_text(c, "# top\nseed = 4 ; trailing\n\n[train]\nviews = 3\n[run]\nout = o\n");
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.train.views, 3);
  EXPECT_EQ(c.out, "o");
}

void expect_config_error(const std::string& text, const std::string& needle) {
  RunConfig c;
  try {
    apply_config_text(c, text, "f.ini");
    FAIL() << "accepted: " << text;
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

TEST(ConfigTest, RejectsUnknownAndMalformed) {
  expect_config_error("[train]\nviews = 5\nnot_a_key = 1\n", "f.ini:3");
  expect_config_error("[train]\nnot_a_key = 1\n", "train.not_a_key");
  expect_config_error("[optimizer]\n", "unknown section");
  expect_config_error("[train\n", "malformed section");
  expect_config_error("seed\n", "key = value");
  expect_config_error("[train]\nviews = five\n", "train.views");
  expect_config_error("[train]\nviews = 2.5\n", "train.views");
  expect_config_error("[train]\nlars = maybe\n", "train.lars");
  expect_config_error("[train]\ndecomposition = hexagons\n", "hexagons");
  expect_config_error("[eval]\nmode = all\n", "all");
  expect_config_error("seed = -1\n", "seed");
}

TEST(ConfigTest, FinalizePropagatesSeedAndValidates) {
  RunConfig c;
  c.seed = 99;
  finalize(c);
  EXPECT_EQ(c.train.seed, 99u);
  EXPECT_EQ(c.dataset.seed, 99u);
  EXPECT_EQ(cluster_eval_config(c).seed, 99u);
  EXPECT_EQ(probe_config(c).seed, 99u);

  auto bad = [](auto mutate) {
    RunConfig r;
    mutate(r);
    EXPECT_THROW(finalize(r), ConfigError);
  };
  bad([](RunConfig& r) { r.train.views = 1; });
  bad([](RunConfig& r) { r.train.mask_coverage = 1.5; });
  bad([](RunConfig& r) { r.train.beta_min = 3.0; });
  bad([](RunConfig& r) { r.eval.clusters = 0; });
  bad([](RunConfig& r) { r.eval.probe_lr = 0.0; });
  bad([](RunConfig& r) { r.dataset.classes = 1; });
}

TEST(ConfigTest, MissingFileIsConfigError) {
  RunConfig c;
  EXPECT_THROW(apply_config_file(c, "/nonexistent/run.ini"), ConfigError);
}

}  // namespace
}  // namespace conceptseg
