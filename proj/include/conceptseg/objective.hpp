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

// Prototype scoring, Sinkhorn-Knopp concept assignment with a FIFO score
// queue, and the swapped-prediction loss with its gradient routed back to
// the dense embedding maps and the prototype bank.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <vector>

#include "conceptseg/encoder.hpp"
#include "conceptseg/error.hpp"
#include "conceptseg/regions.hpp"
#include "conceptseg/rng.hpp"
#include "conceptseg/superpixel.hpp"

namespace conceptseg {

/// D x K matrix of unit-norm concept vectors, stored column-major.
template <typename T>
struct PrototypeBank {
  int dim = 0;
  int count = 0;
  std::vector<T> values;

  PrototypeBank() = default;
  PrototypeBank(int d, int k) : dim(d), count(k), values(static_cast<std::size_t>(d) * k, T(0)) {}

  T* column(int k) { return values.data() + static_cast<std::size_t>(k) * dim; }
  const T* column(int k) const { return values.data() + static_cast<std::size_t>(k) * dim; }

  /// Rescales columns to unit length. Columns already unit length within
  /// a few ulps are left bit-identical.
  void normalize_columns() {
    for (int k = 0; k < count; ++k) {
      T* c = column(k);
      double sq = 0.0;
      for (int d = 0; d < dim; ++d) sq += static_cast<double>(c[d]) * c[d];
      const double norm = std::sqrt(sq);
      if (norm <= 0.0) throw NumericError("prototype column " + std::to_string(k) + " collapsed to zero");
      if (std::abs(norm - 1.0) <= 4.0 * std::numeric_limits<T>::epsilon()) continue;
      for (int d = 0; d < dim; ++d) c[d] = static_cast<T>(c[d] / norm);
    }
  }

  static PrototypeBank random(int d, int k, std::uint64_t seed) {
    if (d < 1 || k < 1) throw InvalidArgument("prototype bank needs D >= 1 and K >= 1");
    PrototypeBank b(d, k);
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (T& v : b.values) v = static_cast<T>(normal(rng));
    b.normalize_columns();
    return b;
  }

  bool operator==(const PrototypeBank&) const = default;
};

/// s_k = z . c_k for every concept.
template <typename T>
std::vector<double> score(const std::vector<double>& zstar, const PrototypeBank<T>& bank) {
  if (static_cast<int>(zstar.size()) != bank.dim) throw InvalidArgument("score: dimension mismatch");
  std::vector<double> s(bank.count, 0.0);
  for (int k = 0; k < bank.count; ++k) {
    const T* c = bank.column(k);
    double acc = 0.0;
    for (int d = 0; d < bank.dim; ++d) acc += zstar[d] * static_cast<double>(c[d]);
    s[k] = acc;
  }
  return s;
}

/// Fixed-capacity FIFO of past primary-view score vectors.
class ScoreQueue {
 public:
  ScoreQueue() = default;
  ScoreQueue(std::size_t capacity, int concepts) : capacity_(capacity), concepts_(concepts) {}

  void push(const std::vector<double>& s) {
    if (static_cast<int>(s.size()) != concepts_) throw InvalidArgument("score queue: vector length mismatch");
    if (capacity_ == 0) return;
    rows_.push_back(s);
    while (rows_.size() > capacity_) rows_.pop_front();
  }
  void push(const std::vector<std::vector<double>>& batch) {
    for (const auto& s : batch) push(s);
  }

  std::size_t size() const { return rows_.size(); }
  std::size_t capacity() const { return capacity_; }
  int concepts() const { return concepts_; }
  const std::deque<std::vector<double>>& rows() const { return rows_; }
  bool operator==(const ScoreQueue&) const = default;

 private:
  std::size_t capacity_ = 0;
  int concepts_ = 0;
  std::deque<std::vector<double>> rows_;
};

inline void push_queue(ScoreQueue& q, const std::vector<std::vector<double>>& scores) { q.push(scores); }

struct LossConfig {
  double temperature = 0.1;
  double epsilon = 0.05;
  int sinkhorn_iterations = 3;
  // Stop early once every concept marginal is within this of 1/K (0 = off).
  double sinkhorn_tolerance = 0.0;
  // Queue rows join the assignment problem once the queue is this full.
  double queue_warmup_fraction = 0.5;
};

inline void validate(const LossConfig& c) {
  if (!(c.temperature > 0) || !(c.epsilon > 0) || c.sinkhorn_iterations < 1)
    throw InvalidArgument("loss config: temperature, epsilon and iterations must be positive");
}

/// Transport plan Q (rows x K) with row sums 1/rows and column sums 1/K.
struct AssignmentMatrix {
  Eigen::MatrixXd plan;
  int iterations_run = 0;

  /// Rows rescaled to sum to one: the per-region soft targets.
  Eigen::MatrixXd targets() const {
    Eigen::MatrixXd t = plan;
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      const double s = t.row(r).sum();
      if (s > 0) t.row(r) /= s;
    }
    return t;
  }
};

/// Entropic OT between uniform marginals by Sinkhorn-Knopp matrix scaling
/// of exp(S / epsilon). Each iteration normalizes concept columns to 1/K,
/// then rows to 1/B.
inline AssignmentMatrix sinkhorn_assign(const Eigen::MatrixXd& scores, const LossConfig& cfg) {
  validate(cfg);
  const Eigen::Index B = scores.rows(), K = scores.cols();
  if (B < 1 || K < 1) throw InvalidArgument("sinkhorn: empty score matrix");
  if (!scores.allFinite()) throw InvalidArgument("sinkhorn: non-finite scores");
  AssignmentMatrix a;
  Eigen::MatrixXd& Q = a.plan;
  Q = scores / cfg.epsilon;
  for (Eigen::Index r = 0; r < B; ++r) Q.row(r).array() -= Q.row(r).maxCoeff();
  Q = Q.array().exp().matrix();
  Q /= Q.sum();
  const double row_target = 1.0 / static_cast<double>(B), col_target = 1.0 / static_cast<double>(K);
  for (int it = 0; it < cfg.sinkhorn_iterations; ++it) {
    for (Eigen::Index k = 0; k < K; ++k) {
      const double s = Q.col(k).sum();
      if (s > 0) Q.col(k) *= col_target / s;
    }
    for (Eigen::Index r = 0; r < B; ++r) {
      const double s = Q.row(r).sum();
      if (s > 0) Q.row(r) *= row_target / s;
    }
    a.iterations_run = it + 1;
    if (cfg.sinkhorn_tolerance > 0) {
      const double err = (Q.colwise().sum().array() - col_target).abs().maxCoeff();
      if (err < cfg.sinkhorn_tolerance) break;
    }
  }
  return a;
}

inline std::vector<double> softmax(const std::vector<double>& s, double tau) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : s) mx = std::max(mx, v / tau);
  std::vector<double> p(s.size());
  double z = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) z += p[k] = std::exp(s[k] / tau - mx);
  for (double& v : p) v /= z;
  return p;
}

/// Per-image targets q keyed by (n, region id); stored as a one-view tree.
using TargetTree = RegionTree<std::vector<double>>;

struct LossResult {
  double loss = 0.0;
  ScoreTree grad;             // d loss / d s for views m >= 1, zero for m = 0
  int contributing_views = 0;
};

/// Cross-entropy between primary-view targets and the tempered softmax of
/// every secondary view's region scores, averaged over regions of a view and
/// then over non-empty secondary views.
inline LossResult swapped_prediction_loss(const ScoreTree& scores, const TargetTree& targets, double tau) {
  LossResult res;
  res.grad = ScoreTree(scores.images(), scores.views());
  for (int n = 0; n < scores.images(); ++n)
    for (int m = 1; m < scores.views(); ++m)
      if (scores.region_count(n, m) > 0) ++res.contributing_views;
  for (int n = 0; n < scores.images(); ++n)
    for (int m = 0; m < scores.views(); ++m)
      for (const auto& node : scores.at(n, m))
        res.grad.at(n, m).push_back({node.id, std::vector<double>(node.payload.size(), 0.0)});
  if (res.contributing_views == 0) return res;
  const double V = res.contributing_views;
  double total = 0.0;
  for (int n = 0; n < scores.images(); ++n)
    for (int m = 1; m < scores.views(); ++m) {
      const auto& nodes = scores.at(n, m);
      if (nodes.empty()) continue;
      const double I = static_cast<double>(nodes.size());
      double view_loss = 0.0;
      for (std::size_t r = 0; r < nodes.size(); ++r) {
        const auto* q = targets.find(n, 0, nodes[r].id);
        if (!q) throw InvalidArgument("swapped prediction: region without a target");
        const auto& s = nodes[r].payload;
        const auto p = softmax(s, tau);
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : s) mx = std::max(mx, v / tau);
        double lse = 0.0;
        for (double v : s) lse += std::exp(v / tau - mx);
        lse = mx + std::log(lse);
        double qsum = 0.0;
        for (std::size_t k = 0; k < s.size(); ++k) {
          view_loss -= (*q)[k] * (s[k] / tau - lse);
          qsum += (*q)[k];
        }
        auto& g = res.grad.at(n, m)[r].payload;
        for (std::size_t k = 0; k < s.size(); ++k) g[k] = (qsum * p[k] - (*q)[k]) / (tau * V * I);
      }
      total += view_loss / I;
    }
  res.loss = total / V;
  return res;
}

/// Flat b <-> (n, m) index with b = n * M + m.
struct BatchLayout {
  int images = 0;
  int views = 0;

  int total() const { return images * views; }
  int index(int n, int m) const { return n * views + m; }
  std::pair<int, int> image_view(int b) const { return {b / views, b % views}; }
};

template <typename T>
struct StepOutputs {
  double loss = 0.0;
  std::vector<Tensor<T>> embedding_grads;   // one per view, D x h x w
  std::vector<double> bank_grad;            // D x K column-major
  std::vector<std::vector<double>> primary_scores;
  double concept_entropy = 0.0;             // entropy of mean softmax(s/tau)
  int regions = 0;                          // surviving regions over all views
  int sinkhorn_rows = 0;
  TargetTree targets;                       // q per (n, region id)
};

/// Entropy (nats) of the average tempered-softmax concept distribution.
inline double concept_usage_entropy(const ScoreTree& scores, double tau) {
  std::vector<double> mean;
  std::size_t n_regions = 0;
  for (int n = 0; n < scores.images(); ++n)
    for (int m = 0; m < scores.views(); ++m)
      for (const auto& node : scores.at(n, m)) {
        const auto p = softmax(node.payload, tau);
        if (mean.empty()) mean.assign(p.size(), 0.0);
        for (std::size_t k = 0; k < p.size(); ++k) mean[k] += p[k];
        ++n_regions;
      }
  if (n_regions == 0) return 0.0;
  double h = 0.0;
  for (double v : mean) {
    const double p = v / static_cast<double>(n_regions);
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

/// Everything between the encoder output and the parameter update: region
/// pooling, scoring, Sinkhorn targets from view 0 (plus queue), the
/// swapped-prediction loss, and its gradient w.r.t. every embedding map
/// and the prototype bank. Targets are constants of the loss; passing
/// `fixed_targets` skips the assignment and uses them instead.
template <typename T>
StepOutputs<T> assemble_step(const std::vector<EmbeddingMap<T>>& embeddings, const std::vector<SuperpixelMap>& maps,
                             const BatchLayout& layout, const PrototypeBank<T>& bank, const ScoreQueue& queue,
                             const LossConfig& cfg, const TargetTree* fixed_targets = nullptr) {
  validate(cfg);
  if (static_cast<int>(embeddings.size()) != layout.total() || maps.size() != embeddings.size())
    throw InvalidArgument("assemble_step: batch size does not match layout");
  const int N = layout.images, M = layout.views, D = bank.dim, K = bank.count;

  EmbeddingTree tz(N, M);
  for (int b = 0; b < layout.total(); ++b) {
    if (embeddings[b].channels != D) throw InvalidArgument("assemble_step: embedding dim != prototype dim");
    const auto [n, m] = layout.image_view(b);
    build_tree(embeddings[b], maps[b], n, m, tz);
  }
  const MeanTree tzs = pool_means(tz);
  ScoreTree ts(N, M);
  StepOutputs<T> out;
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < M; ++m)
      for (const auto& node : tzs.at(n, m)) {
        ts.at(n, m).push_back({node.id, score(node.payload.mean, bank)});
        ++out.regions;
      }

  // Sinkhorn over [queue rows; current primary rows]
  const bool use_queue = queue.capacity() > 0 && queue.size() > 0 &&
                         static_cast<double>(queue.size()) >= cfg.queue_warmup_fraction * queue.capacity();
  const std::size_t qrows = use_queue ? queue.size() : 0;
  std::size_t cur = 0;
  for (int n = 0; n < N; ++n) cur += ts.at(n, 0).size();
  TargetTree targets(N, 1);
  for (int n = 0; n < N; ++n)
    for (const auto& node : ts.at(n, 0)) out.primary_scores.push_back(node.payload);
  if (fixed_targets) {
    targets = *fixed_targets;
  } else if (cur > 0) {
    Eigen::MatrixXd S(static_cast<Eigen::Index>(qrows + cur), K);
    Eigen::Index r = 0;
    if (use_queue)
      for (const auto& row : queue.rows()) {
        for (int k = 0; k < K; ++k) S(r, k) = row[k];
        ++r;
      }
    for (int n = 0; n < N; ++n)
      for (const auto& node : ts.at(n, 0)) {
        for (int k = 0; k < K; ++k) S(r, k) = node.payload[k];
        ++r;
      }
    out.sinkhorn_rows = static_cast<int>(S.rows());
    if (!S.allFinite()) throw NumericError("non-finite region scores");
    const Eigen::MatrixXd Q = sinkhorn_assign(S, cfg).targets();
    r = static_cast<Eigen::Index>(qrows);
    for (int n = 0; n < N; ++n)
      for (const auto& node : ts.at(n, 0)) {
        std::vector<double> q(K);
        for (int k = 0; k < K; ++k) q[k] = Q(r, k);
        targets.at(n, 0).push_back({node.id, std::move(q)});
        ++r;
      }
  }

  const LossResult lr = swapped_prediction_loss(ts, targets, cfg.temperature);
  out.targets = std::move(targets);
  out.loss = lr.loss;
  out.concept_entropy = concept_usage_entropy(ts, cfg.temperature);

  // ds -> (dz*, dC) -> dmean -> per-pixel gradients
  out.bank_grad.assign(static_cast<std::size_t>(D) * K, 0.0);
  out.embedding_grads.reserve(embeddings.size());
  for (const auto& e : embeddings) out.embedding_grads.emplace_back(e.channels, e.height, e.width);
  std::vector<double> dz(D), dmean(D);
  for (int n = 0; n < N; ++n)
    for (int m = 1; m < M; ++m) {
      const auto& gnodes = lr.grad.at(n, m);
      const auto& mnodes = tzs.at(n, m);
      Tensor<T>& eg = out.embedding_grads[layout.index(n, m)];
      const std::size_t plane = eg.plane();
      for (std::size_t r = 0; r < gnodes.size(); ++r) {
        const auto& ds = gnodes[r].payload;
        const PooledRegion& pr = mnodes[r].payload;
        std::fill(dz.begin(), dz.end(), 0.0);
        for (int k = 0; k < K; ++k) {
          if (ds[k] == 0.0) continue;
          const T* c = bank.column(k);
          double* gc = out.bank_grad.data() + static_cast<std::size_t>(k) * D;
          for (int d = 0; d < D; ++d) {
            dz[d] += ds[k] * static_cast<double>(c[d]);
            gc[d] += ds[k] * pr.mean[d];
          }
        }
        double dot = 0.0;
        for (int d = 0; d < D; ++d) dot += pr.mean[d] * dz[d];
        const double scale = 1.0 / (pr.mean_norm * static_cast<double>(pr.count));
        for (int d = 0; d < D; ++d) dmean[d] = (dz[d] - pr.mean[d] * dot) * scale;
        const RegionPixels* px = tz.find(n, m, gnodes[r].id);
        for (auto j : px->pixels)
          for (int d = 0; d < D; ++d) eg.data[d * plane + j] += static_cast<T>(dmean[d]);
      }
    }
  return out;
}

}  // namespace conceptseg
