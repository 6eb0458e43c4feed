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


// Brute-force oracles shared by the unit tests and the acceptance run.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "conceptseg/evaluation.hpp"
#include "conceptseg/objective.hpp"
#include "conceptseg/superpixel.hpp"
#include "conceptseg/viewgen.hpp"

namespace conceptseg::testing {

// Maximum of <Q, S> over the transport polytope by enumerating basic
// feasible solutions: choose B+K-1 cells, solve the marginal equations.
inline double lp_optimum(const Eigen::MatrixXd& S) {
  const int B = static_cast<int>(S.rows()), K = static_cast<int>(S.cols()), cells = B * K, basis = B + K - 1;
  double best = -std::numeric_limits<double>::infinity();
  std::vector<int> pick(basis);
  std::iota(pick.begin(), pick.end(), 0);
  while (true) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(basis, basis);
    Eigen::VectorXd b(basis);
    for (int r = 0; r < B; ++r) b(r) = 1.0 / B;
    for (int k = 0; k < K - 1; ++k) b(B + k) = 1.0 / K;  // last column constraint is redundant
    for (int j = 0; j < basis; ++j) {
      const int r = pick[j] / K, k = pick[j] % K;
      A(r, j) = 1.0;
      if (k < K - 1) A(B + k, j) = 1.0;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (lu.isInvertible()) {
      const Eigen::VectorXd x = lu.solve(b);
      if (x.minCoeff() >= -1e-12) {
        double v = 0;
        for (int j = 0; j < basis; ++j) v += x(j) * S(pick[j] / K, pick[j] % K);
        best = std::max(best, v);
      }
    }
    int i = basis - 1;
    while (i >= 0 && pick[i] == cells - basis + i) --i;
    if (i < 0) break;
    ++pick[i];
    for (int j = i + 1; j < basis; ++j) pick[j] = pick[j - 1] + 1;
  }
  return best;
}

// Straightforward re-implementation of the objective for the oracle.
inline double scalar_loss(const ScoreTree& s, const TargetTree& q, double tau) {
  double total = 0;
  int views = 0;
  for (int n = 0; n < s.images(); ++n)
    for (int m = 1; m < s.views(); ++m) {
      if (s.at(n, m).empty()) continue;
      ++views;
      double v = 0;
      for (const auto& node : s.at(n, m)) {
        const auto& x = node.payload;
        const auto& t = *q.find(n, 0, node.id);
        double z = 0;
        for (double xi : x) z += std::exp(xi / tau);
        for (std::size_t k = 0; k < x.size(); ++k) v -= t[k] * std::log(std::exp(x[k] / tau) / z);
      }
      total += v / static_cast<double>(s.at(n, m).size());
    }
  return total / views;
}

// Max over injective class -> cluster maps by enumerating cluster orders.
inline std::int64_t brute_force_matching(const ConfusionMatrix& cm) {
  std::vector<int> perm(cm.rows);
  std::iota(perm.begin(), perm.end(), 0);
  std::int64_t best = -1;
  do {
    std::int64_t s = 0;
    for (int c = 0; c < cm.cols; ++c) s += cm.at(perm[c], c);
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Empty when `map` satisfies every SuperpixelMap invariant, else the first
// violation: shape, label range, unused labels, or a label split into
// several 4-connected components.
inline std::string map_violation(const SuperpixelMap& map, int h, int w) {
  if (map.height != h || map.width != w || map.labels.size() != static_cast<std::size_t>(h) * w) return "shape";
  std::vector<int> seen(std::max(0, map.region_count), 0);
  for (auto l : map.labels) {
    if (l < 0 || l >= map.region_count) return "label " + std::to_string(l) + " out of range";
    seen[l] = 1;
  }
  for (int r = 0; r < map.region_count; ++r)
    if (!seen[r]) return "label " + std::to_string(r) + " unused";
  if (static_cast<int>(connected_components(map).size.size()) != map.region_count) return "disconnected region";
  return {};
}

// Label of the source pixel behind view pixel (y, x), undoing the flip.
inline std::int32_t source_label(const SuperpixelMap& src, const ViewSpec& s, int y, int x) {
  const int ux = s.flip ? s.view_width - 1 - x : x;
  const int sy = s.crop_box.y0 + nearest_source(y, s.crop_box.height(), s.view_height);
  const int sx = s.crop_box.x0 + nearest_source(ux, s.crop_box.width(), s.view_width);
  return src.at(sy, sx);
}

}  // namespace conceptseg::testing
