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

// Run configuration: a flat `key = value` file with [sections], one table
// of fields that drives both the file parser and the command-line flags.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "conceptseg/dataset.hpp"
#include "conceptseg/error.hpp"
#include "conceptseg/evaluation.hpp"
#include "conceptseg/training.hpp"

namespace conceptseg {

enum class EvalMode { kCluster, kLinear, kBoth };

struct EvalSettings {
  EvalMode mode = EvalMode::kBoth;
  int clusters = 12;
  int kmeans_iterations = 50;
  std::int64_t max_fit_points = 1000000;
  int probe_epochs = 20;
  double probe_lr = 0.1;
  int probe_batch = 256;
  std::int64_t probe_max_points = 200000;
  bool random_init = false;  // evaluate the seeded initial encoder instead of a checkpoint
};

struct RunConfig {
  std::string data;        // dataset directory
  std::string out;         // output directory
  std::string checkpoint;  // checkpoint to evaluate / visualize
  std::string resume;      // checkpoint to continue training from
  std::uint64_t seed = 0;
  TrainConfig train;
  EvalSettings eval;
  SyntheticDatasetSpec dataset;
};

struct ConfigField {
  std::string section;  // empty for top-level run settings
  std::string key;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;

  std::string name() const { return section.empty() ? key : section + "." + key; }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

template <typename I>
I parse_integer(const std::string& name, const std::string& v) {
  I out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError("'" + name + "': expected an integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& name, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size() || !std::isfinite(out))
    throw ConfigError("'" + name + "': expected a finite number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& name, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + name + "': expected true/false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
inline std::string format_real(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename Acc>
ConfigField int_field(std::string sec, std::string key, std::string help, Acc acc) {
  return {sec, key, help,
          [acc, n = sec + "." + key](RunConfig& c, const std::string& v) {
            auto& ref = acc(c);
            ref = parse_integer<std::remove_reference_t<decltype(ref)>>(n, v);
          },
          [acc](const RunConfig& c) { return std::to_string(acc(const_cast<RunConfig&>(c))); }};
}

template <typename Acc>
ConfigField real_field(std::string sec, std::string key, std::string help, Acc acc) {
  return {sec, key, help, [acc, n = sec + "." + key](RunConfig& c, const std::string& v) { acc(c) = parse_real(n, v); },
          [acc](const RunConfig& c) { return format_real(acc(const_cast<RunConfig&>(c))); }};
}

template <typename Acc>
ConfigField bool_field(std::string sec, std::string key, std::string help, Acc acc) {
  return {sec, key, help, [acc, n = sec + "." + key](RunConfig& c, const std::string& v) { acc(c) = parse_bool(n, v); },
          [acc](const RunConfig& c) { return std::string(acc(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Acc>
ConfigField string_field(std::string sec, std::string key, std::string help, Acc acc) {
  return {sec, key, help, [acc](RunConfig& c, const std::string& v) { acc(c) = v; },
          [acc](const RunConfig& c) { return acc(const_cast<RunConfig&>(c)); }};
}

}  // namespace detail

inline const char* to_string(Decomposition d) { return d == Decomposition::kGrid ? "grid" : "superpixel"; }
inline const char* to_string(EvalMode m) {
  return m == EvalMode::kCluster ? "cluster" : m == EvalMode::kLinear ? "linear" : "both";
}

inline Decomposition parse_decomposition(const std::string& v) {
  if (v == "superpixel") return Decomposition::kSuperpixel;
  if (v == "grid") return Decomposition::kGrid;
  throw ConfigError("'train.decomposition': expected superpixel or grid, got '" + v + "'");
}

inline EvalMode parse_eval_mode(const std::string& v) {
  if (v == "cluster") return EvalMode::kCluster;
  if (v == "linear") return EvalMode::kLinear;
  if (v == "both") return EvalMode::kBoth;
  throw ConfigError("'eval.mode': expected cluster, linear or both, got '" + v + "'");
}

/// Every configurable field, in file order.
inline const std::vector<ConfigField>& config_fields() {
  using namespace detail;
  using R = RunConfig;
  static const std::vector<ConfigField> fields = {
      string_field("", "data", "dataset directory", [](R& c) -> auto& { return c.data; }),
      string_field("", "out", "output directory", [](R& c) -> auto& { return c.out; }),
      string_field("", "checkpoint", "checkpoint to evaluate or visualize", [](R& c) -> auto& { return c.checkpoint; }),
      string_field("", "resume", "checkpoint to resume training from", [](R& c) -> auto& { return c.resume; }),
      int_field("", "seed", "seed for every random stream", [](R& c) -> auto& { return c.seed; }),

      int_field("train", "images_per_batch", "images per step (N)", [](R& c) -> auto& { return c.train.images_per_batch; }),
      int_field("train", "views", "views per image (M)", [](R& c) -> auto& { return c.train.views; }),
      int_field("train", "view_size", "view side in pixels", [](R& c) -> auto& { return c.train.view_size; }),
      {"train", "decomposition", "superpixel or grid",
       [](R& c, const std::string& v) { c.train.decomposition = parse_decomposition(v); },
       [](const R& c) { return std::string(to_string(c.train.decomposition)); }},
      int_field("train", "region_size", "superpixel / grid cell size", [](R& c) -> auto& { return c.train.region_size; }),
      real_field("train", "compactness", "SLIC compactness", [](R& c) -> auto& { return c.train.compactness; }),
      int_field("train", "min_region_pixels", "smallest region kept in a view",
                [](R& c) -> auto& { return c.train.min_region_pixels; }),
      real_field("train", "mask_coverage", "max masked fraction of a view's mutual-region pixels", [](R& c) -> auto& { return c.train.mask_coverage; }),
      real_field("train", "beta_min", "min crop scale", [](R& c) -> auto& { return c.train.beta_min; }),
      real_field("train", "beta_max", "max crop scale", [](R& c) -> auto& { return c.train.beta_max; }),
      real_field("train", "max_offset", "max view-center offset (fraction)", [](R& c) -> auto& { return c.train.max_offset; }),
      real_field("train", "color_strength", "color distortion strength", [](R& c) -> auto& { return c.train.color_strength; }),
      real_field("train", "max_blur_sigma", "max Gaussian blur sigma", [](R& c) -> auto& { return c.train.max_blur_sigma; }),
      int_field("train", "encoder_width", "encoder base width", [](R& c) -> auto& { return c.train.encoder_width; }),
      int_field("train", "embed_dim", "embedding dimension D", [](R& c) -> auto& { return c.train.embed_dim; }),
      int_field("train", "concepts", "number of concepts K", [](R& c) -> auto& { return c.train.concepts; }),
      int_field("train", "queue_capacity", "score queue capacity", [](R& c) -> auto& { return c.train.queue_capacity; }),
      real_field("train", "temperature", "softmax temperature", [](R& c) -> auto& { return c.train.temperature; }),
      real_field("train", "epsilon", "Sinkhorn entropy weight", [](R& c) -> auto& { return c.train.epsilon; }),
      int_field("train", "sinkhorn_iterations", "Sinkhorn iterations",
                [](R& c) -> auto& { return c.train.sinkhorn_iterations; }),
      real_field("train", "base_lr", "peak learning rate", [](R& c) -> auto& { return c.train.base_lr; }),
      int_field("train", "warmup_steps", "linear warmup steps", [](R& c) -> auto& { return c.train.warmup_steps; }),
      int_field("train", "epochs", "epochs (overrides steps when > 0)", [](R& c) -> auto& { return c.train.epochs; }),
      int_field("train", "steps", "training steps", [](R& c) -> auto& { return c.train.steps; }),
      real_field("train", "weight_decay", "L2 weight decay", [](R& c) -> auto& { return c.train.weight_decay; }),
      real_field("train", "momentum", "SGD momentum", [](R& c) -> auto& { return c.train.momentum; }),
      bool_field("train", "lars", "LARS trust-ratio scaling", [](R& c) -> auto& { return c.train.lars; }),
      real_field("train", "lars_eta", "LARS trust coefficient", [](R& c) -> auto& { return c.train.lars_eta; }),
      int_field("train", "checkpoint_every_epochs", "checkpoint period in epochs (0: final only)",
                [](R& c) -> auto& { return c.train.checkpoint_every_epochs; }),

      {"eval", "mode", "cluster, linear or both", [](R& c, const std::string& v) { c.eval.mode = parse_eval_mode(v); },
       [](const R& c) { return std::string(to_string(c.eval.mode)); }},
      int_field("eval", "clusters", "k-means clusters K_eval", [](R& c) -> auto& { return c.eval.clusters; }),
      int_field("eval", "kmeans_iterations", "max Lloyd iterations", [](R& c) -> auto& { return c.eval.kmeans_iterations; }),
      int_field("eval", "max_fit_points", "k-means subsample size", [](R& c) -> auto& { return c.eval.max_fit_points; }),
      int_field("eval", "probe_epochs", "linear probe epochs", [](R& c) -> auto& { return c.eval.probe_epochs; }),
      real_field("eval", "probe_lr", "linear probe learning rate", [](R& c) -> auto& { return c.eval.probe_lr; }),
      int_field("eval", "probe_batch", "linear probe batch size", [](R& c) -> auto& { return c.eval.probe_batch; }),
      int_field("eval", "probe_max_points", "probe training pixels", [](R& c) -> auto& { return c.eval.probe_max_points; }),
      bool_field("eval", "random_init", "use the seeded initial encoder", [](R& c) -> auto& { return c.eval.random_init; }),

      int_field("dataset", "images", "images to synthesize", [](R& c) -> auto& { return c.dataset.images; }),
      int_field("dataset", "image_size", "image side in pixels", [](R& c) -> auto& { return c.dataset.image_size; }),
      int_field("dataset", "classes", "classes including background", [](R& c) -> auto& { return c.dataset.classes; }),
      real_field("dataset", "val_fraction", "validation split fraction", [](R& c) -> auto& { return c.dataset.val_fraction; }),
  };
  return fields;
}

inline const ConfigField* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : config_fields())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

/// Applies a config file on top of `cfg`. Unknown sections or keys,
/// malformed lines and bad values are ConfigErrors naming the line.
inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto where = origin + ":" + std::to_string(lineno) + ": ";
    const auto hash = line.find_first_of("#;");
    line = detail::trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section == "run") section.clear();
      if (!section.empty() && section != "train" && section != "eval" && section != "dataset")
        throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const auto key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    const ConfigField* f = find_field(section, key);
    if (!f) throw ConfigError(where + "unknown key '" + (section.empty() ? key : section + "." + key) + "'");
    try {
      f->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream s;
  s << in.rdbuf();
  apply_config_text(cfg, s.str(), path);
}

/// The fully resolved configuration in the file format.
inline std::string to_config_text(const RunConfig& cfg) {
  std::ostringstream o;
  std::string section = "-";
  for (const auto& f : config_fields()) {
    if (f.section != section) {
      section = f.section;
      o << (o.tellp() > 0 ? "\n" : "") << "[" << (section.empty() ? "run" : section) << "]\n";
    }
    o << f.key << " = " << f.get(cfg) << "\n";
  }
  return o.str();
}

/// Propagates the run seed and checks every section.
inline void finalize(RunConfig& cfg) {
  cfg.train.seed = cfg.seed;
  cfg.dataset.seed = cfg.seed;
  validate(cfg.train);
  validate(cfg.dataset);
  const auto& e = cfg.eval;
  if (e.clusters < 1) throw ConfigError("eval.clusters must be >= 1");
  if (e.kmeans_iterations < 1) throw ConfigError("eval.kmeans_iterations must be >= 1");
  if (e.max_fit_points < 1) throw ConfigError("eval.max_fit_points must be >= 1");
  if (e.probe_epochs < 1 || e.probe_batch < 1 || e.probe_max_points < 1)
    throw ConfigError("eval.probe_epochs, probe_batch and probe_max_points must be >= 1");
  if (!(e.probe_lr > 0)) throw ConfigError("eval.probe_lr must be > 0");
}

inline ClusterEvalConfig cluster_eval_config(const RunConfig& c) {
  return {c.eval.clusters, c.eval.kmeans_iterations, static_cast<std::size_t>(c.eval.max_fit_points), c.seed};
}

inline ProbeConfig probe_config(const RunConfig& c) {
  return {c.eval.probe_epochs, c.eval.probe_lr, c.eval.probe_batch, c.seed};
}

}  // namespace conceptseg
