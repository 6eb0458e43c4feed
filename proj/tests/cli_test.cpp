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


// End-to-end tests of the command-line tool: exit codes, output files and
// the train/resume/eval/visualize contracts.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "conceptseg/dataset.hpp"
#include "conceptseg/evaluation.hpp"
#include "conceptseg/image.hpp"

namespace fs = std::filesystem;

namespace conceptseg {
namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(CONCEPTSEG_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(line);
  return out;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  static fs::path root() { return fs::temp_directory_path() / "conceptseg_cli_test"; }
  static std::string data() { return (root() / "data").string(); }

  static void SetUpTestSuite() {
    fs::remove_all(root());
    ASSERT_EQ(run("gen-dataset --out " + data() + " --dataset.images 10 --seed 3"), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root()); }

  fs::path dir(const std::string& name) const {
    const auto d = root() / name;
    fs::remove_all(d);
    return d;
  }
};

TEST_F(CliTest, GenDatasetWritesPairsAndIsByteIdentical) {
  const auto other = dir("data_again");
  ASSERT_EQ(run("gen-dataset --out " + other.string() + " --dataset.images 10 --seed 3"), 0);
  int pairs = 0;
  for (const auto& e : fs::directory_iterator(fs::path(data()) / "images")) {
    const auto name = e.path().filename();
    ASSERT_TRUE(fs::exists(fs::path(data()) / "labels" / name));
    EXPECT_EQ(read_bytes(e.path()), read_bytes(other / "images" / name));
    EXPECT_EQ(read_bytes(fs::path(data()) / "labels" / name), read_bytes(other / "labels" / name));
    ++pairs;
  }
  EXPECT_EQ(pairs, 10);
  EXPECT_EQ(read_bytes(fs::path(data()) / "manifest.json"), read_bytes(other / "manifest.json"));
}

TEST_F(CliTest, OneStepWritesOneFiniteMetricsLine) {
  const auto out = dir("one_step");
  ASSERT_EQ(run("train --data " + data() + " --out " + out.string() + " --train.steps 1 --train.images_per_batch 4"), 0);
  const auto lines = read_lines(out / "metrics.jsonl");
  ASSERT_EQ(lines.size(), 1u);
  const auto j = nlohmann::json::parse(lines[0]);
  EXPECT_EQ(j.at("step").get<int>(), 1);
  EXPECT_TRUE(std::isfinite(j.at("loss").get<double>()));
  EXPECT_EQ(read_lines(out / "metrics.csv").size(), 2u);  // header + one row
  EXPECT_TRUE(fs::exists(out / "final.ckpt"));
  EXPECT_TRUE(fs::exists(out / "config.ini"));
}

// Losses of every step, keyed by step; timings differ between runs.
std::vector<std::pair<int, double>> losses(const fs::path& jsonl) {
  std::vector<std::pair<int, double>> out;
  for (const auto& line : read_lines(jsonl)) {
    const auto j = nlohmann::json::parse(line);
    out.emplace_back(j.at("step").get<int>(), j.at("loss").get<double>());
  }
  return out;
}

TEST_F(CliTest, ResumeContinuesTheUninterruptedTrajectory) {
  // 8 training images, 4 per step: 2 steps per epoch, 2 epochs
  const std::string common = "train --data " + data() + " --train.images_per_batch 4 --train.epochs 2 --train.warmup_steps 1";
  const auto full = dir("full"), part = dir("part");
  ASSERT_EQ(run(common + " --out " + full.string()), 0);
  ASSERT_EQ(run(common + " --out " + part.string() + " --train.checkpoint_every_epochs 1"), 0);
  ASSERT_TRUE(fs::exists(part / "checkpoint_epoch1.ckpt"));
  const auto resumed = dir("resumed");
  ASSERT_EQ(run(common + " --out " + resumed.string() + " --resume " + (part / "checkpoint_epoch1.ckpt").string()), 0);
  const auto a = losses(full / "metrics.jsonl"), b = losses(resumed / "metrics.jsonl");
  ASSERT_EQ(a.size(), 4u);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0], a[2]);
  EXPECT_EQ(b[1], a[3]);
  EXPECT_EQ(read_bytes(full / "final.ckpt"), read_bytes(resumed / "final.ckpt"));
}

TEST_F(CliTest, EvalBothModesWritesBothFiles) {
  const auto out = dir("eval");
  ASSERT_EQ(run("eval --data " + data() + " --out " + out.string() +
                " --eval.random_init true --eval.clusters 8 --eval.probe_epochs 2"),
            0);
  for (const char* f : {"eval_cluster.json", "eval_cluster.csv", "eval_linear.json", "eval_linear.csv"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto j = nlohmann::json::parse(read_bytes(out / "eval_cluster.json"));
  const double miou = j.at("greedy").at("miou").get<double>();
  EXPECT_GE(miou, 0.0);
  EXPECT_LE(miou, 1.0);
  EXPECT_TRUE(j.contains("hungarian"));  // 8 clusters >= 6 classes

  // baseline against an independent recount of the val label histogram
  const Dataset d = load_dataset(data(), false, true);
  std::vector<double> count(d.classes, 0.0);
  double total = 0;
  for (const auto& s : d.val)
    for (auto l : s.labels.data) count[l] += 1, total += 1;
  double base = 0;
  int present = 0;
  for (double c : count)
    if (c > 0) base += (c / total) / (2 - c / total), ++present;
  EXPECT_NEAR(j.at("baseline_miou").get<double>(), base / present, 1e-12);
}

TEST_F(CliTest, ClusterCountAboveDistinctEmbeddingsIsCleanError) {
  const auto out = dir("eval_big");
  EXPECT_EQ(run("eval --data " + data() + " --out " + out.string() +
                " --eval.random_init true --eval.mode cluster --eval.clusters 2000000000"),
            2);
}

TEST_F(CliTest, VisualizeThreeImagesDeterministicWithBoundedPalette) {
  std::vector<std::string> inputs;
  for (const auto& e : fs::directory_iterator(fs::path(data()) / "images")) inputs.push_back(e.path().string());
  std::sort(inputs.begin(), inputs.end());
  inputs.resize(3);
  std::string args = "visualize --eval.random_init true --eval.clusters 5 --images";
  for (const auto& p : inputs) args += " " + p;
  const auto a = dir("vis_a"), b = dir("vis_b");
  ASSERT_EQ(run(args + " --out " + a.string()), 0);
  ASSERT_EQ(run(args + " --out " + b.string()), 0);
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ASSERT_EQ(e.path().extension(), ".png");
    ++pngs;
    EXPECT_EQ(read_bytes(e.path()), read_bytes(b / e.path().filename()));
    const auto img = load_image(e.path().string());
    const int W = img.width / 3;
    std::set<std::tuple<float, float, float>> palette;
    for (int y = 0; y < img.height; ++y)
      for (int x = W; x < 2 * W; ++x) palette.insert({img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)});
    EXPECT_LE(palette.size(), 5u);
    EXPECT_GE(palette.size(), 2u);
  }
  EXPECT_EQ(pngs, 3);
}

TEST_F(CliTest, BenchAndDebugViewsWriteOutputs) {
  const auto bench = dir("bench");
  ASSERT_EQ(run("bench-decompose --data " + data() + " --out " + bench.string() + " --sizes 8,16"), 0);
  EXPECT_EQ(read_lines(bench / "bench.csv").size(), 1u + 10u * 2u * 2u);
  const auto views = dir("views");
  ASSERT_EQ(run("debug-views --data " + data() + " --out " + views.string() + " --step 2"), 0);
  EXPECT_TRUE(fs::exists(views / "views.json"));
  EXPECT_TRUE(fs::exists(views / "step2_n0_m0.png"));
  EXPECT_TRUE(fs::exists(views / "step2_n0_m4_regions.png"));
}

TEST_F(CliTest, ExitCodesAndNoPartialOutputs) {
  const auto out = dir("invalid");
  const std::string train = "train --data " + data() + " --out " + out.string();
  EXPECT_EQ(run(train + " --train.views 1"), 2);
  EXPECT_EQ(run(train + " --train.mask_coverage 2"), 2);
  EXPECT_EQ(run(train + " --no-such-flag 1"), 2);
  EXPECT_EQ(run(train + " --seed minus-one"), 2);
  const auto ini = root() / "bad.ini";
  std::ofstream(ini) << "[train]\nviews = 5\nlearning_rate = 0.1\n";
  EXPECT_EQ(run(train + " --config " + ini.string()), 2);
  EXPECT_FALSE(fs::exists(out)) << "outputs written despite invalid config";

  EXPECT_EQ(run("train --data " + (root() / "missing").string() + " --out " + out.string()), 3);
  EXPECT_EQ(run("eval --data " + data() + " --out " + out.string() + " --checkpoint " + (root() / "none.ckpt").string()), 3);
  EXPECT_EQ(run(train + " --train.steps 3 --train.base_lr 1e30 --train.warmup_steps 0"), 4);
  EXPECT_EQ(run("frobnicate"), 2);
}

TEST_F(CliTest, ConfigFileAndFlagPrecedence) {
  const auto out = dir("precedence");
  const auto ini = root() / "run.ini";
  std::ofstream(ini) << "seed = 5\n[train]\nsteps = 3\nviews = 4\n";
  ASSERT_EQ(run("train --data " + data() + " --out " + out.string() + " --config " + ini.string() + " --train.steps 2"), 0);
  const auto text = read_bytes(out / "config.ini");
  EXPECT_NE(text.find("seed = 5\n"), std::string::npos);
  EXPECT_NE(text.find("steps = 2\n"), std::string::npos);
  EXPECT_NE(text.find("views = 4\n"), std::string::npos);
  EXPECT_EQ(read_lines(out / "metrics.jsonl").size(), 2u);
}

TEST_F(CliTest, FiveHundredStepsLowerTheLoss) {
  const auto out = dir("long");
  ASSERT_EQ(run("train --data " + data() + " --out " + out.string() + " --train.steps 500"), 0);
  const auto l = losses(out / "metrics.jsonl");
  ASSERT_EQ(l.size(), 500u);
  double early = 0;
  for (int i = 0; i < 10; ++i) early += l[i].second / 10;
  EXPECT_LT(l.back().second, early);
}

}  // namespace
}  // namespace conceptseg
