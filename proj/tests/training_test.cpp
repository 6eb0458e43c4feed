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

#include "conceptseg/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"

namespace conceptseg {
namespace {

using testing::natural_texture;
using testing::scratch_dir;

TrainConfig tiny_config(std::uint64_t seed = 7) {
  TrainConfig c;
  c.images_per_batch = 2;
  c.views = 3;
  c.view_size = 16;
  c.region_size = 4;
  c.encoder_width = 8;
  c.embed_dim = 8;
  c.concepts = 6;
  c.queue_capacity = 12;
  c.steps = 20;
  c.warmup_steps = 2;
  c.base_lr = 0.05;
  c.seed = seed;
  return c;
}

std::vector<ImageTensor> tiny_images(int n = 4) {
  std::vector<ImageTensor> v;
  for (int i = 0; i < n; ++i) v.push_back(natural_texture(32, 32, 100 + i));
  return v;
}

TEST(LrSchedule, WarmupThenCosine) {
  EXPECT_DOUBLE_EQ(lr_at(0, 1.0, 10, 110), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(5, 1.0, 10, 110), 0.5);
  EXPECT_DOUBLE_EQ(lr_at(10, 1.0, 10, 110), 1.0);
  EXPECT_NEAR(lr_at(60, 1.0, 10, 110), 0.5, 1e-12);
  EXPECT_NEAR(lr_at(110, 1.0, 10, 110), 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(lr_at(0, 0.3, 0, 10), 0.3);
  for (int s = 10; s < 110; ++s) EXPECT_LE(lr_at(s + 1, 1.0, 10, 110), lr_at(s, 1.0, 10, 110));
}

TEST(TrainConfigTest, RejectsBadFields) {
  TrainConfig c = tiny_config();
  c.views = 1;
  EXPECT_THROW(validate(c), ConfigError);
  c = tiny_config();
  c.view_size = 12;
  EXPECT_THROW(validate(c), ConfigError);
  c = tiny_config();
  c.momentum = 1.0;
  EXPECT_THROW(validate(c), ConfigError);
  c = tiny_config();
  c.decomposition = Decomposition::kGrid;
  c.region_size = 1;
  EXPECT_NO_THROW(validate(c));
}

TEST(TrainerTest, ImageTooSmallIsDataError) {
  std::vector<ImageTensor> imgs = {natural_texture(6, 6, 1)};
  EXPECT_THROW(Trainer(tiny_config(), imgs), DataError);
  EXPECT_THROW(Trainer(tiny_config(), {}), DataError);
}

TEST(TrainerTest, ZeroLearningRateFreezesWeightsButFillsQueue) {
  TrainConfig c = tiny_config();
  c.base_lr = 0.0;
  Trainer t(c, tiny_images());
  const TrainState init = t.state();
  for (int i = 0; i < 3; ++i) {
    const auto m = t.step();
    EXPECT_TRUE(std::isfinite(m.loss));
  }
  EXPECT_EQ(t.state().params, init.params);
  EXPECT_EQ(t.state().bank, init.bank);
  EXPECT_GT(t.state().queue.size(), 0u);
  EXPECT_LE(t.state().queue.size(), t.state().queue.capacity());
  EXPECT_EQ(t.state().step, 3);
}

TEST(TrainerTest, DeterministicForFixedSeed) {
  Trainer a(tiny_config(), tiny_images()), b(tiny_config(), tiny_images()), c(tiny_config(8), tiny_images());
  for (int i = 0; i < 6; ++i) {
    const auto ma = a.step(), mb = b.step();
    c.step();
    EXPECT_EQ(ma.loss, mb.loss);
  }
  EXPECT_EQ(a.state(), b.state());
  EXPECT_NE(a.state().params, c.state().params);
}

TEST(TrainerTest, EpochVisitsEveryImageOnce) {
  TrainConfig c = tiny_config();
  Trainer t(c, tiny_images(6));
  std::vector<int> seen(6, 0);
  for (int s = 0; s < t.steps_per_epoch(); ++s)
    for (auto i : t.batch_indices(s)) ++seen[i];
  for (int v : seen) EXPECT_EQ(v, 1);
  EXPECT_NE(t.batch_indices(0), t.batch_indices(3));  // new permutation next epoch
}

TEST(TrainerTest, SmallStepLowersLossOnFixedBatch) {
  Trainer t(tiny_config(), tiny_images());
  const PreparedBatch b = t.prepare(0);
  const StepGradients g = t.compute(b);
  t.apply_update(g, 0.02);
  const StepGradients after = t.compute(b, &g.outputs.targets);
  EXPECT_LT(after.outputs.loss, g.outputs.loss);
}

TEST(TrainerTest, PrimaryViewsGetNoGradient) {
  Trainer t(tiny_config(), tiny_images());
  const PreparedBatch b = t.prepare(0);
  const StepGradients g = t.compute(b);
  for (int n = 0; n < b.layout.images; ++n)
    for (float v : g.outputs.embedding_grads[b.layout.index(n, 0)].data) EXPECT_EQ(v, 0.0f);
}

TEST(TrainerTest, BankStaysUnitNormAndLossFinite) {
  TrainConfig c = tiny_config();
  c.lars = true;
  Trainer t(c, tiny_images());
  for (int i = 0; i < 8; ++i) {
    const auto m = t.step();
    ASSERT_TRUE(std::isfinite(m.loss));
    EXPECT_GT(m.regions, 0);
    EXPECT_GE(m.concept_entropy, 0.0);
    EXPECT_LE(m.concept_entropy, std::log(c.concepts) + 1e-9);
  }
  const auto& bank = t.state().bank;
  for (int k = 0; k < bank.count; ++k) {
    double sq = 0;
    for (int d = 0; d < bank.dim; ++d) sq += double(bank.column(k)[d]) * bank.column(k)[d];
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-5);
  }
}

TEST(TrainerTest, NonFiniteInputRaisesNumericErrorNamingImages) {
  auto imgs = tiny_images();
  for (auto& im : imgs)
    for (std::size_t j = 0; j < im.plane(); ++j) im.data[j] = std::numeric_limits<float>::quiet_NaN();
  Trainer t(tiny_config(), imgs, {"img_a", "img_b", "img_c", "img_d"});
  try {
    t.step();
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("images: img_"), std::string::npos) << msg;
  }
}

TEST(TrainerTest, DivergenceRaisesNumericError) {
  auto cfg = tiny_config();
  cfg.base_lr = 1e30;
  cfg.warmup_steps = 0;
  Trainer t(cfg, tiny_images());
  try {
    for (int i = 0; i < 5; ++i) t.step();
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("images: "), std::string::npos) << e.what();
  }
}

TEST(CheckpointTest, RoundTripIsExact) {
  const auto dir = scratch_dir("ckpt_roundtrip");
  Trainer t(tiny_config(), tiny_images());
  for (int i = 0; i < 3; ++i) t.step();
  t.save((dir / "a.ckpt").string());
  EXPECT_EQ(load_checkpoint((dir / "a.ckpt").string()), t.state());
}

TEST(CheckpointTest, ResumeMatchesUninterruptedRun) {
  const auto dir = scratch_dir("ckpt_resume");
  Trainer full(tiny_config(), tiny_images());
  for (int i = 0; i < 6; ++i) full.step();
  Trainer first(tiny_config(), tiny_images());
  for (int i = 0; i < 3; ++i) first.step();
  first.save((dir / "mid.ckpt").string());
  Trainer resumed(tiny_config(), tiny_images());
  resumed.load((dir / "mid.ckpt").string());
  for (int i = 0; i < 3; ++i) resumed.step();
  EXPECT_EQ(resumed.state(), full.state());
}

TEST(CheckpointTest, StepZeroHoldsInitialEncoder) {
  const auto dir = scratch_dir("ckpt_init");
  const TrainConfig c = tiny_config();
  Trainer t(c, tiny_images());
  t.save((dir / "init.ckpt").string());
  const TrainState s = load_checkpoint((dir / "init.ckpt").string());
  EXPECT_EQ(s.step, 0);
  EXPECT_EQ(s.params, init_params<float>(derive_seed(c.seed, {1}), encoder_config(c)));
}

TEST(CheckpointTest, TruncatedOrPaddedFilesAreRejected) {
  const auto dir = scratch_dir("ckpt_corrupt");
  Trainer t(tiny_config(), tiny_images());
  t.step();
  const auto path = (dir / "x.ckpt").string();
  t.save(path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{3}}) {
    std::ofstream(dir / "cut.ckpt", std::ios::binary) << bytes.substr(0, cut);
    EXPECT_THROW(load_checkpoint((dir / "cut.ckpt").string()), CorruptDataError) << cut;
  }
  std::ofstream(dir / "pad.ckpt", std::ios::binary) << bytes << "x";
  EXPECT_THROW(load_checkpoint((dir / "pad.ckpt").string()), CorruptDataError);
  EXPECT_THROW(load_checkpoint((dir / "missing.ckpt").string()), FileNotFoundError);
}

TEST(CheckpointTest, MismatchedArchitectureIsConfigError) {
  const auto dir = scratch_dir("ckpt_mismatch");
  Trainer t(tiny_config(), tiny_images());
  t.save((dir / "a.ckpt").string());
  TrainConfig other = tiny_config();
  other.embed_dim = 16;
  Trainer u(other, tiny_images());
  EXPECT_THROW(u.load((dir / "a.ckpt").string()), ConfigError);
}

}  // namespace
}  // namespace conceptseg
