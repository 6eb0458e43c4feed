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

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "conceptseg/dataset.hpp"
#include "conceptseg/encoder.hpp"
#include "conceptseg/error.hpp"
#include "conceptseg/image.hpp"
#include "conceptseg/rng.hpp"
#include "conceptseg/superpixel.hpp"
#include "conceptseg/training.hpp"

namespace conceptseg {

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Embedding extraction
// ---------------------------------------------------------------------------

/// Runs the encoder on a whole image. Sizes that are not a multiple of the
/// downsampling factor are reflect-padded and the output cropped back.
inline EmbeddingMap<float> embed_image(const EncoderParams<float>& params, const ImageTensor& img) {
  const int f = params.config.downsampling();
  const int H = (img.height + f - 1) / f * f, W = (img.width + f - 1) / f * f;
  if (H == img.height && W == img.width) return forward(params, img);
  Tensor<float> padded(3, H, W);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        padded.at(c, y, x) = img.at(c, reflect_index(y, img.height), reflect_index(x, img.width));
  const auto full = forward(params, padded);
  EmbeddingMap<float> out(full.channels, img.height, img.width);
  for (int c = 0; c < full.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = full.at(c, y, x);
  out.normalized = true;
  return out;
}

/// Pixel vectors of `emb` as rows, optionally only the listed pixels.
inline FeatureMatrix pixel_rows(const EmbeddingMap<float>& emb, const std::vector<std::size_t>& pixels = {}) {
  const std::size_t P = emb.plane();
  const bool all = pixels.empty();
  const auto n = static_cast<Eigen::Index>(all ? P : pixels.size());
  FeatureMatrix X(n, emb.channels);
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::size_t j = all ? static_cast<std::size_t>(r) : pixels[r];
    for (int d = 0; d < emb.channels; ++d) X(r, d) = emb.data[d * P + j];
  }
  return X;
}

/// Every `stride`-th labeled pixel, starting at `offset`.
inline std::vector<std::size_t> strided_pixels(const LabelMap& labels, std::size_t stride, std::size_t offset = 0) {
  std::vector<std::size_t> out;
  for (std::size_t j = offset % stride; j < labels.data.size(); j += stride)
    if (labels.data[j] != kIgnoreLabel) out.push_back(j);
  return out;
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct KMeansResult {
  FeatureMatrix centroids;               // k x D
  std::vector<int> assignments;          // per fitted point
  std::vector<double> inertia_history;   // after each assignment step
  int iterations = 0;
  double inertia() const { return inertia_history.empty() ? 0.0 : inertia_history.back(); }
};

/// Number of distinct rows, counting no further than `cap`.
inline std::size_t distinct_rows(const FeatureMatrix& X, std::size_t cap) {
  std::vector<std::uint64_t> hashes(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    std::uint64_t h = 1469598103934665603ULL;
    for (Eigen::Index d = 0; d < X.cols(); ++d) {
      float v = X(r, d);
      if (v == 0.0f) v = 0.0f;  // fold -0
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = (h ^ bits) * 1099511628211ULL;
    }
    hashes[r] = h;
  }
  std::sort(hashes.begin(), hashes.end());
  std::size_t n = hashes.empty() ? 0 : 1;
  for (std::size_t i = 1; i < hashes.size() && n < cap; ++i) n += hashes[i] != hashes[i - 1];
  return n;
}

/// Index of the nearest centroid for each row (ties to the lower index).
inline std::vector<int> nearest_centroid(const FeatureMatrix& X, const FeatureMatrix& C,
                                         std::vector<double>* sq_dist = nullptr) {
  const Eigen::VectorXf cn = C.rowwise().squaredNorm();
  std::vector<int> out(static_cast<std::size_t>(X.rows()));
  if (sq_dist) sq_dist->assign(out.size(), 0.0);
  constexpr Eigen::Index kChunk = 4096;
  for (Eigen::Index r0 = 0; r0 < X.rows(); r0 += kChunk) {
    const Eigen::Index rows = std::min(kChunk, X.rows() - r0);
    const Eigen::MatrixXf G = X.middleRows(r0, rows) * C.transpose();
    for (Eigen::Index r = 0; r < rows; ++r) {
      int best = 0;
      float bd = std::numeric_limits<float>::infinity();
      for (Eigen::Index k = 0; k < C.rows(); ++k) {
        const float d = cn(k) - 2.0f * G(r, k);
        if (d < bd) bd = d, best = static_cast<int>(k);
      }
      out[r0 + r] = best;
      if (sq_dist) (*sq_dist)[r0 + r] = (X.row(r0 + r).cast<double>() - C.row(best).cast<double>()).squaredNorm();
    }
  }
  return out;
}

/// k-means++ seeding followed by Lloyd iterations until assignments stop
/// changing. An empty cluster is re-seeded with the point farthest from
/// its current centroid.
inline KMeansResult kmeans(const FeatureMatrix& X, int k, int max_iterations, std::uint64_t seed) {
  const Eigen::Index n = X.rows(), D = X.cols();
  if (k < 1) throw InvalidArgument("kmeans: k must be >= 1");
  if (distinct_rows(X, static_cast<std::size_t>(k)) < static_cast<std::size_t>(k))
    throw InvalidArgument("kmeans: k = " + std::to_string(k) + " exceeds the number of distinct embeddings");
  Rng rng(seed);
  KMeansResult res;
  res.centroids.resize(k, D);
  // k-means++
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Eigen::Index first = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
  res.centroids.row(0) = X.row(first);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (X.row(i).cast<double>() - res.centroids.row(c - 1).cast<double>()).squaredNorm());
      total += d2[i];
    }
    Eigen::Index pick = n - 1;
    if (total > 0) {
      const double target = uniform(rng, 0.0, total);
      double cum = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        cum += d2[i];
        if (cum > target && d2[i] > 0) {
          pick = i;
          break;
        }
      }
    }
    res.centroids.row(c) = X.row(pick);
  }
  // Lloyd
  std::vector<double> dist;
  res.assignments = nearest_centroid(X, res.centroids, &dist);
  for (int it = 0; it < max_iterations; ++it) {
    res.inertia_history.push_back(std::accumulate(dist.begin(), dist.end(), 0.0));
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, D);
    std::vector<std::int64_t> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(res.assignments[i]) += X.row(i).cast<double>();
      ++counts[res.assignments[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        res.centroids.row(c) = (sums.row(c) / static_cast<double>(counts[c])).cast<float>();
        continue;
      }
      const auto far = std::max_element(dist.begin(), dist.end()) - dist.begin();
      res.centroids.row(c) = X.row(far);
      dist[far] = 0.0;
    }
    std::vector<double> new_dist;
    auto next = nearest_centroid(X, res.centroids, &new_dist);
    res.iterations = it + 1;
    const bool stable = next == res.assignments;
    res.assignments = std::move(next);
    dist = std::move(new_dist);
    if (stable) break;
  }
  res.inertia_history.push_back(std::accumulate(dist.begin(), dist.end(), 0.0));
  return res;
}

// ---------------------------------------------------------------------------
// Confusion matrix, label assignment and metrics
// ---------------------------------------------------------------------------

/// Rows are predicted clusters (or classes), columns ground-truth classes.
struct ConfusionMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<std::int64_t> counts;

  ConfusionMatrix() = default;
  ConfusionMatrix(int r, int c) : rows(r), cols(c), counts(static_cast<std::size_t>(r) * c, 0) {}
  std::int64_t& at(int r, int c) { return counts[static_cast<std::size_t>(r) * cols + c]; }
  std::int64_t at(int r, int c) const { return counts[static_cast<std::size_t>(r) * cols + c]; }
  std::int64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }
  void add(int pred, std::int32_t gt) {
    if (gt == kIgnoreLabel) return;
    if (pred < 0 || pred >= rows || gt < 0 || gt >= cols) throw InvalidArgument("confusion matrix: id out of range");
    ++at(pred, gt);
  }
};

/// Each cluster takes its majority class; ties go to the lowest class id.
inline std::vector<int> greedy_assign(const ConfusionMatrix& cm) {
  std::vector<int> map(cm.rows, 0);
  for (int r = 0; r < cm.rows; ++r)
    for (int c = 1; c < cm.cols; ++c)
      if (cm.at(r, c) > cm.at(r, map[r])) map[r] = c;
  return map;
}

/// One-to-one matching of classes to clusters maximizing the total matched
/// count (Hungarian method with potentials). Returns the cluster per class.
inline std::vector<int> hungarian_match(const ConfusionMatrix& cm) {
  const int n = cm.cols, m = cm.rows;  // classes are matched into clusters
  if (m < n) throw InvalidArgument("hungarian_assign: need at least as many clusters as classes");
  const double inf = std::numeric_limits<double>::infinity();
  auto cost = [&](int i, int j) { return -static_cast<double>(cm.at(j - 1, i - 1)); };
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> match(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) match[p[j] - 1] = j - 1;
  return match;
}

/// Hungarian matching for the classes; clusters left over are assigned
/// greedily.
inline std::vector<int> hungarian_assign(const ConfusionMatrix& cm) {
  const auto match = hungarian_match(cm);
  std::vector<int> map = greedy_assign(cm);
  for (int c = 0; c < cm.cols; ++c) map[match[c]] = c;
  return map;
}

/// Total count on matched (cluster, class) pairs.
inline std::int64_t matched_count(const ConfusionMatrix& cm, const std::vector<int>& map) {
  std::int64_t s = 0;
  for (int r = 0; r < cm.rows; ++r) s += cm.at(r, map[r]);
  return s;
}

/// Merges cluster rows into class rows following `map`.
inline ConfusionMatrix apply_assignment(const ConfusionMatrix& cm, const std::vector<int>& map) {
  ConfusionMatrix out(cm.cols, cm.cols);
  for (int r = 0; r < cm.rows; ++r)
    for (int c = 0; c < cm.cols; ++c) out.at(map[r], c) += cm.at(r, c);
  return out;
}

struct SegmentationMetrics {
  double miou = 0.0;
  double accuracy = 0.0;
  std::vector<double> iou;      // per class; NaN when absent from ground truth
};

/// IoU per class, mIoU over classes present in ground truth, pixel accuracy.
inline SegmentationMetrics miou_acc(const ConfusionMatrix& cm) {
  if (cm.rows != cm.cols) throw InvalidArgument("miou_acc: expects a class x class matrix");
  const int L = cm.cols;
  SegmentationMetrics m;
  m.iou.assign(L, std::numeric_limits<double>::quiet_NaN());
  std::int64_t tp_total = 0, total = cm.total();
  int present = 0;
  double sum = 0.0;
  for (int c = 0; c < L; ++c) {
    std::int64_t tp = cm.at(c, c), pred = 0, gt = 0;
    for (int k = 0; k < L; ++k) pred += cm.at(c, k), gt += cm.at(k, c);
    tp_total += tp;
    if (gt == 0) continue;
    m.iou[c] = static_cast<double>(tp) / static_cast<double>(pred + gt - tp);
    sum += m.iou[c];
    ++present;
  }
  m.miou = present ? sum / present : 0.0;
  m.accuracy = total ? static_cast<double>(tp_total) / static_cast<double>(total) : 0.0;
  return m;
}

/// Expected mIoU when predictions are drawn independently of the ground
/// truth with the ground-truth class frequencies: IoU_c = f/(2 - f).
inline double random_baseline_miou(const std::vector<double>& freq) {
  double s = 0.0;
  int n = 0;
  for (double f : freq)
    if (f > 0) s += f / (2.0 - f), ++n;
  return n ? s / n : 0.0;
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

struct ProbeConfig {
  int epochs = 20;
  double lr = 0.1;
  int batch_size = 256;
  std::uint64_t seed = 0;
};

/// Per-pixel linear classifier: logits = W x + b.
struct LinearProbe {
  Eigen::MatrixXd weight;  // L x D
  Eigen::VectorXd bias;    // L

  int predict(const float* x) const {
    const Eigen::Map<const Eigen::VectorXf> v(x, weight.cols());
    Eigen::VectorXd logits = weight * v.cast<double>() + bias;
    Eigen::Index best;
    logits.maxCoeff(&best);
    return static_cast<int>(best);
  }
};

/// Mean softmax cross-entropy over the rows of X and its gradient.
inline double probe_loss(const LinearProbe& p, const FeatureMatrix& X, const std::vector<int>& y,
                         Eigen::MatrixXd* dW = nullptr, Eigen::VectorXd* db = nullptr) {
  const Eigen::MatrixXd Xd = X.cast<double>();
  Eigen::MatrixXd logits = (Xd * p.weight.transpose()).rowwise() + p.bias.transpose();
  double loss = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - mx).exp().matrix();
    const double z = logits.row(r).sum();
    logits.row(r) /= z;
    loss -= std::log(std::max(logits(r, y[r]), 1e-300));
    logits(r, y[r]) -= 1.0;  // now softmax - onehot
  }
  const double inv = 1.0 / static_cast<double>(X.rows());
  if (dW) *dW = logits.transpose() * Xd * inv;
  if (db) *db = logits.colwise().sum().transpose() * inv;
  return loss * inv;
}

/// Minibatch SGD on softmax cross-entropy with cosine-decayed LR.
inline LinearProbe train_linear_probe(const FeatureMatrix& X, const std::vector<int>& y, int classes,
                                      const ProbeConfig& cfg) {
  if (X.rows() == 0 || static_cast<std::size_t>(X.rows()) != y.size())
    throw InvalidArgument("linear probe: features and labels must align and be non-empty");
  LinearProbe p{Eigen::MatrixXd::Zero(classes, X.cols()), Eigen::VectorXd::Zero(classes)};
  std::vector<Eigen::Index> order(static_cast<std::size_t>(X.rows()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  const Eigen::Index B = cfg.batch_size;
  const std::int64_t per_epoch = (X.rows() + B - 1) / B, total = per_epoch * cfg.epochs;
  std::int64_t t = 0;
  FeatureMatrix xb;
  std::vector<int> yb;
  Eigen::MatrixXd dW;
  Eigen::VectorXd db;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index s = 0; s < X.rows(); s += B, ++t) {
      const Eigen::Index rows = std::min(B, X.rows() - s);
      xb.resize(rows, X.cols());
      yb.resize(rows);
      for (Eigen::Index r = 0; r < rows; ++r) {
        xb.row(r) = X.row(order[s + r]);
        yb[r] = y[order[s + r]];
      }
      probe_loss(p, xb, yb, &dW, &db);
      const double lr = 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / total));
      p.weight -= lr * dW;
      p.bias -= lr * db;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// PCA visualization
// ---------------------------------------------------------------------------

struct PcaProjection {
  Eigen::MatrixXd components;  // D x 3, columns by decreasing variance
  Eigen::VectorXd variances;   // 3
  Eigen::MatrixXd projected;   // P x 3, before scaling
};

inline constexpr double kPcaRankTolerance = 1e-10;

/// Top-3 principal directions of the pixel-vector cloud. Each component's
/// largest-magnitude coefficient is made positive.
inline PcaProjection pca_project(const EmbeddingMap<float>& emb) {
  if (emb.channels < 1) throw InvalidArgument("pca: empty embedding");
  const Eigen::MatrixXd X = pixel_rows(emb).cast<double>();
  const Eigen::RowVectorXd mean = X.colwise().mean();
  const Eigen::MatrixXd Xc = X.rowwise() - mean;
  const Eigen::MatrixXd cov = Xc.transpose() * Xc / static_cast<double>(std::max<Eigen::Index>(1, X.rows()));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  PcaProjection p;
  p.components = Eigen::MatrixXd::Zero(emb.channels, 3);
  p.variances = Eigen::VectorXd::Zero(3);
  const double scale = std::max(1e-300, cov.trace());
  for (int c = 0; c < 3 && c < emb.channels; ++c) {
    const Eigen::Index col = emb.channels - 1 - c;  // eigenvalues ascend
    const double lambda = es.eigenvalues()(col);
    if (lambda <= kPcaRankTolerance * scale) continue;
    Eigen::VectorXd v = es.eigenvectors().col(col);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    p.components.col(c) = v;
    p.variances(c) = lambda;
  }
  p.projected = Xc * p.components;
  return p;
}

/// Projection onto the top-3 components, each min-max scaled to [0, 255].
/// Components without variance become constant 128.
inline Rgb8Image pca_visualize(const EmbeddingMap<float>& emb) {
  const PcaProjection p = pca_project(emb);
  Rgb8Image out(emb.height, emb.width, 128);
  for (int c = 0; c < 3; ++c) {
    if (p.variances(c) <= 0) continue;
    const double lo = p.projected.col(c).minCoeff(), hi = p.projected.col(c).maxCoeff();
    if (!(hi > lo)) continue;
    for (Eigen::Index j = 0; j < p.projected.rows(); ++j)
      out.data[static_cast<std::size_t>(j) * 3 + c] =
          static_cast<std::uint8_t>(std::lround(255.0 * (p.projected(j, c) - lo) / (hi - lo)));
  }
  return out;
}

/// Deterministic, well-spread color for cluster id k.
inline std::array<std::uint8_t, 3> cluster_color(int k) {
  const auto rgb = hsv_to_rgb(0.61803398875 * k, 0.55 + 0.4 * ((k / 7) % 2), 0.95 - 0.3 * ((k / 3) % 2));
  return {static_cast<std::uint8_t>(std::lround(255 * rgb[0])), static_cast<std::uint8_t>(std::lround(255 * rgb[1])),
          static_cast<std::uint8_t>(std::lround(255 * rgb[2]))};
}

/// input | cluster colors | PCA, side by side.
inline Rgb8Image triptych(const ImageTensor& img, const std::vector<int>& clusters, const Rgb8Image& pca) {
  const int H = img.height, W = img.width;
  Rgb8Image out(H, 3 * W);
  const Rgb8Image in = to_rgb8_image(img);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const auto col = cluster_color(clusters[static_cast<std::size_t>(y) * W + x]);
      for (int c = 0; c < 3; ++c) {
        out.px(y, x)[c] = in.px(y, x)[c];
        out.px(y, W + x)[c] = col[c];
        out.px(y, 2 * W + x)[c] = pca.px(y, x)[c];
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation pipelines
// ---------------------------------------------------------------------------

struct ClusterEvalConfig {
  int clusters = 12;
  int iterations = 50;
  std::size_t max_fit_points = 1000000;
  std::uint64_t seed = 0;
};

struct ClusterEvalResult {
  ConfusionMatrix confusion;  // clusters x classes
  SegmentationMetrics greedy;
  SegmentationMetrics hungarian;
  bool hungarian_valid = false;
  double baseline_miou = 0.0;
  std::size_t fit_points = 0;
};

/// Fits k-means on (a uniform-stride subsample of) the pixel embeddings of
/// `samples`, then scores every labeled pixel.
inline ClusterEvalResult evaluate_clusters(const EncoderParams<float>& params, const std::vector<Sample>& samples,
                                           int classes, const ClusterEvalConfig& cfg) {
  if (samples.empty()) throw DataError("cluster evaluation: empty split");
  std::size_t labeled = 0;
  for (const auto& s : samples)
    for (auto l : s.labels.data) labeled += l != kIgnoreLabel;
  const std::size_t stride = std::max<std::size_t>(1, (labeled + cfg.max_fit_points - 1) / cfg.max_fit_points);
  std::vector<EmbeddingMap<float>> embs;
  embs.reserve(samples.size());
  std::vector<FeatureMatrix> parts;
  Eigen::Index rows = 0;
  for (const auto& s : samples) {
    embs.push_back(embed_image(params, s.image));
    parts.push_back(pixel_rows(embs.back(), strided_pixels(s.labels, stride)));
    rows += parts.back().rows();
  }
  FeatureMatrix fit(rows, params.config.embed_dim);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    fit.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  parts.clear();
  const KMeansResult km = kmeans(fit, cfg.clusters, cfg.iterations, cfg.seed);
  ClusterEvalResult res;
  res.fit_points = static_cast<std::size_t>(fit.rows());
  res.confusion = ConfusionMatrix(cfg.clusters, classes);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto assign = nearest_centroid(pixel_rows(embs[i]), km.centroids);
    for (std::size_t j = 0; j < assign.size(); ++j) res.confusion.add(assign[j], samples[i].labels.data[j]);
  }
  res.greedy = miou_acc(apply_assignment(res.confusion, greedy_assign(res.confusion)));
  if (cfg.clusters >= classes) {
    res.hungarian = miou_acc(apply_assignment(res.confusion, hungarian_assign(res.confusion)));
    res.hungarian_valid = true;
  }
  res.baseline_miou = random_baseline_miou(class_frequencies(samples, classes));
  return res;
}

struct LinearEvalResult {
  SegmentationMetrics metrics;
  std::size_t train_points = 0;
};

/// Trains the probe on a pixel subsample of `train` and scores every
/// labeled pixel of `val`. The encoder stays frozen.
inline LinearEvalResult evaluate_linear(const EncoderParams<float>& params, const std::vector<Sample>& train,
                                        const std::vector<Sample>& val, int classes, const ProbeConfig& cfg,
                                        std::size_t max_train_points = 200000) {
  if (train.empty() || val.empty()) throw DataError("linear evaluation: needs train and val splits");
  std::size_t labeled = 0;
  for (const auto& s : train)
    for (auto l : s.labels.data) labeled += l != kIgnoreLabel;
  const std::size_t stride = std::max<std::size_t>(1, (labeled + max_train_points - 1) / max_train_points);
  std::vector<FeatureMatrix> parts;
  std::vector<int> y;
  Eigen::Index rows = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto px = strided_pixels(train[i].labels, stride, i);
    parts.push_back(pixel_rows(embed_image(params, train[i].image), px));
    for (auto j : px) y.push_back(train[i].labels.data[j]);
    rows += parts.back().rows();
  }
  FeatureMatrix X(rows, params.config.embed_dim);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    X.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  const LinearProbe probe = train_linear_probe(X, y, classes, cfg);
  ConfusionMatrix cm(classes, classes);
  for (const auto& s : val) {
    const auto emb = embed_image(params, s.image);
    const FeatureMatrix V = pixel_rows(emb);
    for (Eigen::Index j = 0; j < V.rows(); ++j) cm.add(probe.predict(V.row(j).data()), s.labels.data[j]);
  }
  return {miou_acc(cm), static_cast<std::size_t>(X.rows())};
}

// ---------------------------------------------------------------------------
// Superpixel vs grid decomposition benchmark
// ---------------------------------------------------------------------------

struct DecompositionRow {
  std::string image;
  std::string method;
  int element_size = 0;
  int regions = 0;
  double milliseconds = 0.0;
};

inline const char* decomposition_name(Decomposition d) { return d == Decomposition::kGrid ? "grid" : "superpixel"; }

/// One row per image x method x element size.
inline std::vector<DecompositionRow> bench_decompositions(const std::vector<Sample>& images,
                                                          const std::vector<int>& sizes,
                                                          const std::vector<Decomposition>& methods) {
  std::vector<DecompositionRow> rows;
  for (const auto& s : images)
    for (auto method : methods)
      for (int size : sizes) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto map = decompose(s.image, method, size);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back({s.id, decomposition_name(method), size, map.region_count, ms});
      }
  return rows;
}

}  // namespace conceptseg
