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

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "conceptseg/encoder.hpp"
#include "conceptseg/error.hpp"
#include "conceptseg/image.hpp"
#include "conceptseg/objective.hpp"
#include "conceptseg/regions.hpp"
#include "conceptseg/rng.hpp"
#include "conceptseg/serialize.hpp"
#include "conceptseg/superpixel.hpp"
#include "conceptseg/viewgen.hpp"

namespace conceptseg {

enum class Decomposition { kSuperpixel, kGrid };

struct TrainConfig {
  // batch
  int images_per_batch = 4;
  int views = 5;
  int view_size = 64;
  // regions
  Decomposition decomposition = Decomposition::kSuperpixel;
  int region_size = 8;
  double compactness = 10.0;
  int min_region_pixels = 4;
  // augmentation
  double mask_coverage = 0.25;
  double beta_min = 0.5;
  double beta_max = 2.0;
  double max_offset = 0.25;  // fraction of min(H, W)
  double color_strength = 0.5;
  double max_blur_sigma = 1.5;
  // model
  int encoder_width = 16;
  int embed_dim = 64;
  int concepts = 32;
  int queue_capacity = 512;
  double temperature = 0.1;
  double epsilon = 0.05;
  int sinkhorn_iterations = 3;
  // optimization
  double base_lr = 0.01;
  int warmup_steps = 100;
  int epochs = 0;     // when > 0, overrides `steps`
  int steps = 2000;
  double weight_decay = 1e-6;
  double momentum = 0.9;
  bool lars = false;
  double lars_eta = 0.001;
  std::uint64_t seed = 0;
  int checkpoint_every_epochs = 0;  // 0: final checkpoint only
};

inline void validate(const TrainConfig& c) {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("train config: ") + what);
  };
  need(c.images_per_batch >= 1, "images_per_batch must be >= 1");
  need(c.views >= 2, "views must be >= 2 (one primary plus at least one predicted view)");
  need(c.view_size >= 8 && c.view_size % 8 == 0, "view_size must be a positive multiple of 8");
  need(c.region_size >= 1, "region_size must be >= 1");
  need(c.decomposition == Decomposition::kGrid || c.region_size >= 2, "superpixel region_size must be >= 2");
  need(c.compactness > 0, "compactness must be > 0");
  need(c.min_region_pixels >= 1, "min_region_pixels must be >= 1");
  need(c.mask_coverage >= 0 && c.mask_coverage <= 1, "mask_coverage must be in [0, 1]");
  need(c.beta_min > 0 && c.beta_min <= c.beta_max, "beta range must satisfy 0 < beta_min <= beta_max");
  need(c.max_offset >= 0 && c.max_offset <= 1, "max_offset must be in [0, 1]");
  need(c.color_strength >= 0 && c.color_strength <= 1, "color_strength must be in [0, 1]");
  need(c.max_blur_sigma >= 0, "max_blur_sigma must be >= 0");
  need(c.encoder_width >= 8 && c.encoder_width % 8 == 0, "encoder_width must be a positive multiple of 8");
  need(c.embed_dim >= 1, "embed_dim must be >= 1");
  need(c.concepts >= 1, "concepts must be >= 1");
  need(c.queue_capacity >= 0, "queue_capacity must be >= 0");
  need(c.temperature > 0 && c.epsilon > 0 && c.sinkhorn_iterations >= 1,
       "temperature, epsilon and sinkhorn_iterations must be positive");
  need(c.base_lr >= 0, "base_lr must be >= 0");
  need(c.warmup_steps >= 0, "warmup_steps must be >= 0");
  need(c.epochs >= 0 && (c.epochs > 0 || c.steps >= 1), "need epochs >= 1 or steps >= 1");
  need(c.weight_decay >= 0, "weight_decay must be >= 0");
  need(c.momentum >= 0 && c.momentum < 1, "momentum must be in [0, 1)");
  need(c.lars_eta > 0, "lars_eta must be > 0");
  need(c.checkpoint_every_epochs >= 0, "checkpoint_every_epochs must be >= 0");
}

inline EncoderConfig encoder_config(const TrainConfig& c) {
  EncoderConfig e;
  e.width = c.encoder_width;
  e.embed_dim = c.embed_dim;
  return e;
}

inline LossConfig loss_config(const TrainConfig& c) {
  LossConfig l;
  l.temperature = c.temperature;
  l.epsilon = c.epsilon;
  l.sinkhorn_iterations = c.sinkhorn_iterations;
  return l;
}

inline ViewConfig view_config(const TrainConfig& c) {
  ViewConfig v;
  v.num_views = c.views;
  v.view_height = v.view_width = c.view_size;
  v.beta_min = c.beta_min;
  v.beta_max = c.beta_max;
  v.max_offset_frac = c.max_offset;
  v.min_region_pixels = c.min_region_pixels;
  return v;
}

inline int steps_per_epoch(const TrainConfig& c, std::size_t num_images) {
  return static_cast<int>((num_images + c.images_per_batch - 1) / c.images_per_batch);
}

inline int total_steps(const TrainConfig& c, std::size_t num_images) {
  return c.epochs > 0 ? c.epochs * steps_per_epoch(c, num_images) : c.steps;
}

/// Linear warmup from 0 to `peak`, then cosine decay to 0 at `total`.
inline double lr_at(int step, double peak, int warmup, int total) {
  if (step < warmup) return peak * step / warmup;
  if (total <= warmup) return peak;
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / (total - warmup));
  return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Decomposition used for training and for the ablations.
inline SuperpixelMap decompose(const ImageTensor& img, Decomposition d, int region_size, double compactness = 10.0) {
  return d == Decomposition::kGrid ? grid_decompose(img.height, img.width, region_size)
                                   : slic(img, region_size, compactness);
}

/// Everything that changes during training.
struct TrainState {
  EncoderParams<float> params;
  PrototypeBank<float> bank;
  ScoreQueue queue;
  ParamGrads<float> momentum;
  std::vector<float> bank_momentum;
  std::int64_t step = 0;

  bool operator==(const TrainState&) const = default;
};

inline TrainState init_state(const TrainConfig& c) {
  validate(c);
  TrainState s;
  s.params = init_params<float>(derive_seed(c.seed, {1}), encoder_config(c));
  s.bank = PrototypeBank<float>::random(c.embed_dim, c.concepts, derive_seed(c.seed, {2}));
  s.queue = ScoreQueue(static_cast<std::size_t>(c.queue_capacity), c.concepts);
  s.momentum = zero_grads(s.params);
  s.bank_momentum.assign(s.bank.values.size(), 0.0f);
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& path, const TrainState& s) {
  BinaryWriter w;
  w.put_tag("CSEG");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put_tag("ENCO");
  write_encoder(w, s.params);
  w.put_tag("BANK");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.bank.dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.bank.count));
  for (float v : s.bank.values) w.put<float>(v);
  w.put_tag("QUEU");
  w.put<std::uint64_t>(s.queue.capacity());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.queue.concepts()));
  w.put<std::uint64_t>(s.queue.size());
  for (const auto& row : s.queue.rows())
    for (double v : row) w.put<double>(v);
  w.put_tag("OPTM");
  w.put<std::int64_t>(s.step);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.momentum.size()));
  for (const auto& m : s.momentum) {
    w.put<std::uint64_t>(m.size());
    for (float v : m) w.put<float>(v);
  }
  w.put<std::uint64_t>(s.bank_momentum.size());
  for (float v : s.bank_momentum) w.put<float>(v);
  w.put_tag("END.");
  w.write_file(path);
}

/// Reads a full training state; nothing is returned unless the whole file
/// parses, so a corrupt file never yields partial state.
inline TrainState load_checkpoint(const std::string& path) {
  auto r = BinaryReader::from_file(path);
  r.expect_tag("CSEG");
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw VersionError("unsupported checkpoint version in " + path);
  TrainState s;
  r.expect_tag("ENCO");
  s.params = read_encoder<float>(r);
  r.expect_tag("BANK");
  const int dim = static_cast<int>(r.get<std::uint32_t>());
  const int count = static_cast<int>(r.get<std::uint32_t>());
  if (dim != s.params.config.embed_dim || count < 1 || count > (1 << 20))
    throw CorruptDataError("checkpoint: prototype bank does not match the encoder");
  s.bank = PrototypeBank<float>(dim, count);
  for (float& v : s.bank.values) v = r.get<float>();
  r.expect_tag("QUEU");
  const auto capacity = r.get<std::uint64_t>();
  const auto concepts = static_cast<int>(r.get<std::uint32_t>());
  const auto size = r.get<std::uint64_t>();
  if (concepts != count || size > capacity || capacity > (1u << 24))
    throw CorruptDataError("checkpoint: inconsistent score queue");
  s.queue = ScoreQueue(capacity, concepts);
  for (std::uint64_t i = 0; i < size; ++i) {
    std::vector<double> row(concepts);
    for (double& v : row) v = r.get<double>();
    s.queue.push(row);
  }
  r.expect_tag("OPTM");
  s.step = r.get<std::int64_t>();
  if (r.get<std::uint32_t>() != s.params.tensors.size()) throw CorruptDataError("checkpoint: optimizer state mismatch");
  s.momentum = zero_grads(s.params);
  for (auto& m : s.momentum) {
    if (r.get<std::uint64_t>() != m.size()) throw CorruptDataError("checkpoint: optimizer state mismatch");
    for (float& v : m) v = r.get<float>();
  }
  if (r.get<std::uint64_t>() != s.bank.values.size()) throw CorruptDataError("checkpoint: optimizer state mismatch");
  s.bank_momentum.resize(s.bank.values.size());
  for (float& v : s.bank_momentum) v = r.get<float>();
  r.expect_tag("END.");
  if (!r.at_end()) throw CorruptDataError("checkpoint: trailing bytes");
  return s;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct StepMetrics {
  std::int64_t step = 0;  // steps completed after this update
  double lr = 0.0;
  double loss = 0.0;
  double queue_fill = 0.0;
  double concept_entropy = 0.0;
  int regions = 0;
  double seconds = 0.0;
};

/// Views of N images for one step, ready for the encoder.
struct PreparedBatch {
  BatchLayout layout;
  std::vector<std::size_t> image_indices;
  std::vector<Tensor<float>> inputs;
  std::vector<SuperpixelMap> maps;
};

struct StepGradients {
  StepOutputs<float> outputs;
  ParamGrads<float> params;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<ImageTensor> images, std::vector<std::string> ids = {})
      : cfg_(std::move(cfg)), images_(std::move(images)), ids_(std::move(ids)) {
    validate(cfg_);
    if (images_.empty()) throw DataError("training needs at least one image");
    if (ids_.empty())
      for (std::size_t i = 0; i < images_.size(); ++i) ids_.push_back("image_" + std::to_string(i));
    if (ids_.size() != images_.size()) throw InvalidArgument("trainer: one id per image required");
    for (std::size_t i = 0; i < images_.size(); ++i) {
      const auto& im = images_[i];
      if (std::lround(cfg_.beta_min * cfg_.view_size) > std::min(im.height, im.width))
        throw DataError("image '" + ids_[i] + "' is too small for the minimum view crop");
    }
    maps_.resize(images_.size());
    pmaps_.resize(images_.size());
    state_ = init_state(cfg_);
  }

  const TrainConfig& config() const { return cfg_; }
  const TrainState& state() const { return state_; }
  int total_steps() const { return conceptseg::total_steps(cfg_, images_.size()); }
  int steps_per_epoch() const { return conceptseg::steps_per_epoch(cfg_, images_.size()); }
  double lr(std::int64_t step) const {
    return lr_at(static_cast<int>(step), cfg_.base_lr, cfg_.warmup_steps, total_steps());
  }

  /// Replaces the training state; the encoder and bank shapes must match.
  void restore(TrainState s) {
    if (!(s.params.config == encoder_config(cfg_)) || s.bank.count != cfg_.concepts)
      throw ConfigError("checkpoint architecture does not match the configuration");
    if (s.queue.capacity() != static_cast<std::size_t>(cfg_.queue_capacity))
      throw ConfigError("checkpoint queue capacity does not match the configuration");
    state_ = std::move(s);
  }
  void save(const std::string& path) const { save_checkpoint(path, state_); }
  void load(const std::string& path) { restore(load_checkpoint(path)); }

  /// Cached decomposition and content-probability map of image i.
  const SuperpixelMap& region_map(std::size_t i) {
    if (!maps_[i]) maps_[i] = decompose(images_[i], cfg_.decomposition, cfg_.region_size, cfg_.compactness);
    return *maps_[i];
  }
  const ProbabilityMap& probability_map(std::size_t i) {
    if (!pmaps_[i]) pmaps_[i] = content_probability(images_[i]);
    return *pmaps_[i];
  }

  /// Image indices used at `step`: a fresh permutation every epoch.
  std::vector<std::size_t> batch_indices(std::int64_t step) const {
    const std::int64_t per_epoch = steps_per_epoch();
    const std::int64_t epoch = step / per_epoch, offset = (step % per_epoch) * cfg_.images_per_batch;
    std::vector<std::size_t> order(images_.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg_.seed, {3, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> out;
    for (int n = 0; n < cfg_.images_per_batch; ++n)
      out.push_back(order[static_cast<std::size_t>(offset + n) % order.size()]);
    return out;
  }

  /// View generation, masking and appearance augmentation for `step`, one batch of
  /// views per image in `batch_indices(step)` order.
  std::vector<ViewBatch> prepare_views(std::int64_t step) {
    std::vector<ViewBatch> out;
    const ViewConfig vc = view_config(cfg_);
    const auto indices = batch_indices(step);
    for (int n = 0; n < cfg_.images_per_batch; ++n) {
      const std::size_t i = indices[n];
      const auto s = static_cast<std::uint64_t>(step), nn = static_cast<std::uint64_t>(n);
      ViewBatch views =
          gen_views(images_[i], region_map(i), vc, derive_seed(cfg_.seed, {4, s, nn}), probability_map(i), ids_[i]);
      // view 0 supplies the targets; masking it makes them arbitrary
      views = mask_views(std::move(views), cfg_.mask_coverage, derive_seed(cfg_.seed, {6, s, nn}), 1);
      out.push_back(appearance_augment(std::move(views), cfg_.color_strength, cfg_.max_blur_sigma,
                                       derive_seed(cfg_.seed, {5, s, nn})));
    }
    return out;
  }

  PreparedBatch prepare(std::int64_t step) {
    PreparedBatch b;
    b.layout = {cfg_.images_per_batch, cfg_.views};
    b.image_indices = batch_indices(step);
    for (auto& views : prepare_views(step))
      for (auto& v : views.views) {
        b.inputs.push_back(to_tensor<float>(v.image));
        b.maps.push_back(std::move(v.map));
      }
    return b;
  }

  const std::string& image_id(std::size_t i) const { return ids_[i]; }

  /// Forward, loss and backward on a prepared batch; no state change.
  StepGradients compute(const PreparedBatch& b, const TargetTree* fixed_targets = nullptr) const {
    std::vector<ForwardCache<float>> caches(b.inputs.size());
    std::vector<EmbeddingMap<float>> emb;
    emb.reserve(b.inputs.size());
    for (std::size_t v = 0; v < b.inputs.size(); ++v) emb.push_back(forward(state_.params, b.inputs[v], caches[v]));
    StepGradients g;
    g.outputs = assemble_step(emb, b.maps, b.layout, state_.bank, state_.queue, loss_config(cfg_), fixed_targets);
    g.params = zero_grads(state_.params);
    for (std::size_t v = 0; v < b.inputs.size(); ++v) {
      // primary views carry no loss gradient
      if (b.layout.image_view(static_cast<int>(v)).second == 0) continue;
      backward(state_.params, caches[v], g.outputs.embedding_grads[v], g.params);
    }
    return g;
  }

  /// SGD with momentum and L2 weight decay; optional
  /// LARS trust ratio on every multi-dimensional tensor and the bank.
  void apply_update(const StepGradients& g, double lr) {
    auto update = [&](std::vector<float>& w, const std::vector<float>& grad, std::vector<float>& mom, bool adapt) {
      double local = lr;
      if (cfg_.lars && adapt) {
        double wn = 0, gn = 0;
        for (std::size_t i = 0; i < w.size(); ++i) wn += double(w[i]) * w[i], gn += double(grad[i]) * grad[i];
        wn = std::sqrt(wn), gn = std::sqrt(gn);
        if (wn > 0 && gn > 0) local *= cfg_.lars_eta * wn / (gn + cfg_.weight_decay * wn);
      }
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = grad[i] + cfg_.weight_decay * w[i];
        mom[i] = static_cast<float>(cfg_.momentum * mom[i] + d);
        w[i] = static_cast<float>(w[i] - local * mom[i]);
      }
    };
    for (std::size_t t = 0; t < state_.params.tensors.size(); ++t)
      update(state_.params.tensors[t].value, g.params[t], state_.momentum[t], state_.params.tensors[t].shape.size() > 1);
    std::vector<float> bank_grad(g.outputs.bank_grad.begin(), g.outputs.bank_grad.end());
    update(state_.bank.values, bank_grad, state_.bank_momentum, true);
    state_.bank.normalize_columns();
  }

  StepMetrics step() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t s = state_.step;
    const PreparedBatch b = prepare(s);
    StepGradients g;
    try {
      g = compute(b);
    } catch (const NumericError& e) {
      numeric_failure(e.what(), b);
    }
    check_finite(g, b);
    const double lr_now = lr(s);
    apply_update(g, lr_now);
    if (!parameters_finite()) numeric_failure("update produced non-finite parameters", b);
    state_.queue.push(g.outputs.primary_scores);
    ++state_.step;
    StepMetrics m;
    m.step = state_.step;
    m.lr = lr_now;
    m.loss = g.outputs.loss;
    m.queue_fill = state_.queue.capacity() ? double(state_.queue.size()) / state_.queue.capacity() : 0.0;
    m.concept_entropy = g.outputs.concept_entropy;
    m.regions = g.outputs.regions;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
  }

  /// Entropy of the mean tempered-softmax concept distribution over
  /// un-augmented views of `images` (a held-out probe of concept usage).
  double concept_entropy(const std::vector<ImageTensor>& images, std::uint64_t seed) const {
    ViewConfig vc = view_config(cfg_);
    ScoreTree scores(static_cast<int>(images.size()), vc.num_views);
    for (std::size_t n = 0; n < images.size(); ++n) {
      const auto map = decompose(images[n], cfg_.decomposition, cfg_.region_size, cfg_.compactness);
      const auto views = gen_views(images[n], map, vc, derive_seed(seed, {n}), "held-out " + std::to_string(n));
      EmbeddingTree tz(1, vc.num_views);
      for (int m = 0; m < vc.num_views; ++m)
        build_tree(forward(state_.params, views.views[m].image), views.views[m].map, 0, m, tz);
      const auto pooled = pool_means(tz);
      for (int m = 0; m < vc.num_views; ++m)
        for (const auto& node : pooled.at(0, m))
          scores.at(static_cast<int>(n), m).push_back({node.id, score(node.payload.mean, state_.bank)});
    }
    return concept_usage_entropy(scores, cfg_.temperature);
  }

 private:
  [[noreturn]] void numeric_failure(const std::string& what, const PreparedBatch& b) const {
    std::string which;
    for (auto i : b.image_indices) which += (which.empty() ? "" : ", ") + ids_[i];
    throw NumericError(what + " at step " + std::to_string(state_.step) + " (lr " + std::to_string(lr(state_.step)) +
                       ", images: " + which + ")");
  }

  void check_finite(const StepGradients& g, const PreparedBatch& b) const {
    bool ok = std::isfinite(g.outputs.loss);
    for (const auto& t : g.params)
      for (float v : t) ok = ok && std::isfinite(v);
    if (!ok) numeric_failure("non-finite loss or gradient (loss " + std::to_string(g.outputs.loss) + ")", b);
  }

  bool parameters_finite() const {
    for (const auto& t : state_.params.tensors)
      for (float v : t.value)
        if (!std::isfinite(v)) return false;
    for (float v : state_.bank.values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  TrainConfig cfg_;
  std::vector<ImageTensor> images_;
  std::vector<std::string> ids_;
  std::vector<std::optional<SuperpixelMap>> maps_;
  std::vector<std::optional<ProbabilityMap>> pmaps_;
  TrainState state_;
};

}  // namespace conceptseg
