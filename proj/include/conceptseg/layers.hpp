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

// Building blocks of the dense encoder. Every layer has a forward pass that
// fills a cache and an exact backward pass consuming it.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

#include "conceptseg/error.hpp"
#include "conceptseg/tensor.hpp"

namespace conceptseg::layers {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct ConvShape {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad() const { return kernel / 2; }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
  int out_size(int in) const { return (in + 2 * pad() - kernel) / stride + 1; }
};

template <typename T>
struct ConvCache {
  int in_h = 0, in_w = 0;
  RowMatrix<T> cols;  // (C*k*k) x (OH*OW); empty for 1x1 stride-1 convs
  Tensor<T> input;    // kept for 1x1 stride-1 convs
};

template <typename T>
void im2col(const Tensor<T>& in, const ConvShape& s, RowMatrix<T>& cols) {
  const int oh = s.out_size(in.height), ow = s.out_size(in.width), k = s.kernel, p = s.pad();
  cols.setZero(static_cast<Eigen::Index>(in.channels) * k * k, static_cast<Eigen::Index>(oh) * ow);
  for (int c = 0; c < in.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * s.stride + ky - p;
          if (iy < 0 || iy >= in.height) continue;
          const T* src = in.channel(c) + static_cast<std::size_t>(iy) * in.width;
          for (int x = 0; x < ow; ++x) {
            const int ix = x * s.stride + kx - p;
            if (ix >= 0 && ix < in.width) row[y * ow + x] = src[ix];
          }
        }
      }
}

template <typename T>
void col2im(const RowMatrix<T>& cols, const ConvShape& s, Tensor<T>& out) {
  const int oh = s.out_size(out.height), ow = s.out_size(out.width), k = s.kernel, p = s.pad();
  std::fill(out.data.begin(), out.data.end(), T(0));
  for (int c = 0; c < out.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * s.stride + ky - p;
          if (iy < 0 || iy >= out.height) continue;
          T* dst = out.channel(c) + static_cast<std::size_t>(iy) * out.width;
          for (int x = 0; x < ow; ++x) {
            const int ix = x * s.stride + kx - p;
            if (ix >= 0 && ix < out.width) dst[ix] += row[y * ow + x];
          }
        }
      }
}

/// Zero-padded 2-D convolution (cross-correlation), weights O x C x k x k.
template <typename T>
Tensor<T> conv_forward(const ConvShape& s, const std::vector<T>& weight, const std::vector<T>& bias,
                       const Tensor<T>& in, ConvCache<T>& cache) {
  if (in.channels != s.in_channels) throw InvalidArgument("conv: input channel mismatch");
  const int oh = s.out_size(in.height), ow = s.out_size(in.width);
  Tensor<T> out(s.out_channels, oh, ow);
  cache.in_h = in.height;
  cache.in_w = in.width;
  ConstMatMap<T> w(weight.data(), s.out_channels, static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel);
  MatMap<T> o(out.data.data(), s.out_channels, static_cast<Eigen::Index>(oh) * ow);
  if (s.kernel == 1 && s.stride == 1) {
    cache.input = in;
    cache.cols.resize(0, 0);
    o.noalias() = w * ConstMatMap<T>(in.data.data(), in.channels, static_cast<Eigen::Index>(in.plane()));
  } else {
    im2col(in, s, cache.cols);
    o.noalias() = w * cache.cols;
  }
  for (int c = 0; c < s.out_channels; ++c) o.row(c).array() += bias[c];
  return out;
}

/// Accumulates weight/bias gradients and returns the input gradient (empty
/// tensor when `need_input_grad` is false).
template <typename T>
Tensor<T> conv_backward(const ConvShape& s, const std::vector<T>& weight, const ConvCache<T>& cache,
                        const Tensor<T>& dout, std::vector<T>& dweight, std::vector<T>& dbias,
                        bool need_input_grad = true) {
  const auto P = static_cast<Eigen::Index>(dout.plane());
  const auto ckk = static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel;
  ConstMatMap<T> g(dout.data.data(), s.out_channels, P);
  MatMap<T> dw(dweight.data(), s.out_channels, ckk);
  const bool pointwise = s.kernel == 1 && s.stride == 1;
  if (pointwise)
    dw.noalias() += g * ConstMatMap<T>(cache.input.data.data(), s.in_channels, P).transpose();
  else
    dw.noalias() += g * cache.cols.transpose();
  // fixed-order sum: vectorized reductions peel by address and are not
  // reproducible across buffers
  for (int c = 0; c < s.out_channels; ++c) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < P; ++j) acc += g(c, j);
    dbias[c] += static_cast<T>(acc);
  }
  if (!need_input_grad) return {};
  ConstMatMap<T> w(weight.data(), s.out_channels, ckk);
  Tensor<T> din(s.in_channels, cache.in_h, cache.in_w);
  if (pointwise) {
    MatMap<T>(din.data.data(), s.in_channels, P).noalias() = w.transpose() * g;
  } else {
    RowMatrix<T> dcols = w.transpose() * g;
    col2im(dcols, s, din);
  }
  return din;
}

template <typename T>
struct GroupNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;  // per group
};

inline constexpr double kGroupNormEps = 1e-5;

/// Group normalization with per-channel affine parameters.
template <typename T>
Tensor<T> group_norm_forward(const Tensor<T>& in, int groups, const std::vector<T>& gamma,
                             const std::vector<T>& beta, GroupNormCache<T>& cache) {
  if (groups < 1 || in.channels % groups != 0) throw InvalidArgument("group_norm: channels not divisible by groups");
  const int cpg = in.channels / groups;
  const std::size_t n = static_cast<std::size_t>(cpg) * in.plane();
  Tensor<T> out(in.channels, in.height, in.width);
  cache.xhat = Tensor<T>(in.channels, in.height, in.width);
  cache.inv_std.assign(groups, T(0));
  for (int g = 0; g < groups; ++g) {
    const T* x = in.channel(g * cpg);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<double>(n);
    const T inv = static_cast<T>(1.0 / std::sqrt(var + kGroupNormEps));
    cache.inv_std[g] = inv;
    T* xh = cache.xhat.channel(g * cpg);
    for (std::size_t i = 0; i < n; ++i) xh[i] = static_cast<T>((x[i] - mean) * inv);
    for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
      const T* xc = cache.xhat.channel(c);
      T* oc = out.channel(c);
      for (std::size_t i = 0; i < in.plane(); ++i) oc[i] = gamma[c] * xc[i] + beta[c];
    }
  }
  return out;
}

template <typename T>
Tensor<T> group_norm_backward(const Tensor<T>& dout, int groups, const std::vector<T>& gamma,
                              const GroupNormCache<T>& cache, std::vector<T>& dgamma, std::vector<T>& dbeta) {
  const int cpg = dout.channels / groups;
  const std::size_t plane = dout.plane();
  const double n = static_cast<double>(cpg) * plane;
  Tensor<T> din(dout.channels, dout.height, dout.width);
  for (int c = 0; c < dout.channels; ++c) {
    const T* d = dout.channel(c);
    const T* xh = cache.xhat.channel(c);
    double sg = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < plane; ++i) sg += d[i] * xh[i], sb += d[i];
    dgamma[c] += static_cast<T>(sg);
    dbeta[c] += static_cast<T>(sb);
  }
  for (int g = 0; g < groups; ++g) {
    // dxhat = dout * gamma; dx = inv/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
    double sum_d = 0.0, sum_dx = 0.0;
    for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
      const T* d = dout.channel(c);
      const T* xh = cache.xhat.channel(c);
      for (std::size_t i = 0; i < plane; ++i) {
        const double dxh = static_cast<double>(d[i]) * gamma[c];
        sum_d += dxh;
        sum_dx += dxh * xh[i];
      }
    }
    const double inv = cache.inv_std[g];
    for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
      const T* d = dout.channel(c);
      const T* xh = cache.xhat.channel(c);
      T* o = din.channel(c);
      for (std::size_t i = 0; i < plane; ++i) {
        const double dxh = static_cast<double>(d[i]) * gamma[c];
        o[i] = static_cast<T>(inv / n * (n * dxh - sum_d - xh[i] * sum_dx));
      }
    }
  }
  return din;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (T& v : x.data) v = v > T(0) ? v : T(0);
}

// `out` is the forward output; the gradient passes where it is positive.
template <typename T>
void relu_backward_inplace(Tensor<T>& grad, const Tensor<T>& out) {
  for (std::size_t i = 0; i < grad.data.size(); ++i)
    if (!(out.data[i] > T(0))) grad.data[i] = T(0);
}

// Bilinear sampling taps for 2x upsampling with half-pixel centers.
struct UpsampleTap {
  int i0, i1;
  double w1;
};

inline std::vector<UpsampleTap> upsample_taps(int in_size, int out_size) {
  std::vector<UpsampleTap> taps(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    const double f = std::clamp((o + 0.5) * scale - 0.5, 0.0, in_size - 1.0);
    const int i0 = static_cast<int>(f);
    taps[o] = {i0, std::min(i0 + 1, in_size - 1), f - i0};
  }
  return taps;
}

template <typename T>
Tensor<T> upsample_forward(const Tensor<T>& in, int out_h, int out_w) {
  Tensor<T> out(in.channels, out_h, out_w);
  const auto ty = upsample_taps(in.height, out_h), tx = upsample_taps(in.width, out_w);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        const auto& a = ty[y];
        const auto& b = tx[x];
        const double top = in.at(c, a.i0, b.i0) * (1 - b.w1) + in.at(c, a.i0, b.i1) * b.w1;
        const double bot = in.at(c, a.i1, b.i0) * (1 - b.w1) + in.at(c, a.i1, b.i1) * b.w1;
        out.at(c, y, x) = static_cast<T>(top * (1 - a.w1) + bot * a.w1);
      }
  return out;
}

template <typename T>
Tensor<T> upsample_backward(const Tensor<T>& dout, int in_h, int in_w) {
  Tensor<T> din(dout.channels, in_h, in_w);
  const auto ty = upsample_taps(in_h, dout.height), tx = upsample_taps(in_w, dout.width);
  for (int c = 0; c < dout.channels; ++c)
    for (int y = 0; y < dout.height; ++y)
      for (int x = 0; x < dout.width; ++x) {
        const auto& a = ty[y];
        const auto& b = tx[x];
        const double g = dout.at(c, y, x);
        din.at(c, a.i0, b.i0) += static_cast<T>(g * (1 - a.w1) * (1 - b.w1));
        din.at(c, a.i0, b.i1) += static_cast<T>(g * (1 - a.w1) * b.w1);
        din.at(c, a.i1, b.i0) += static_cast<T>(g * a.w1 * (1 - b.w1));
        din.at(c, a.i1, b.i1) += static_cast<T>(g * a.w1 * b.w1);
      }
  return din;
}

inline constexpr double kNormFloor = 1e-6;

/// Per-pixel L2 normalization across channels; `norms` receives the
/// pre-normalization lengths. A vector shorter than kNormFloor has no
/// usable direction: it maps to the first basis vector and passes no
/// gradient, which keeps every output pixel unit length.
template <typename T>
Tensor<T> l2_normalize_forward(const Tensor<T>& in, std::vector<T>& norms) {
  Tensor<T> out(in.channels, in.height, in.width);
  const std::size_t P = in.plane();
  norms.assign(P, T(0));
  std::vector<double> acc(P, 0.0);
  for (int c = 0; c < in.channels; ++c) {
    const T* x = in.channel(c);
    for (std::size_t i = 0; i < P; ++i) acc[i] += static_cast<double>(x[i]) * x[i];
  }
  for (std::size_t i = 0; i < P; ++i) norms[i] = static_cast<T>(std::sqrt(acc[i]));
  for (int c = 0; c < in.channels; ++c) {
    const T* x = in.channel(c);
    T* o = out.channel(c);
    for (std::size_t i = 0; i < P; ++i)
      o[i] = norms[i] < kNormFloor ? T(c == 0 ? 1 : 0) : static_cast<T>(x[i] / norms[i]);
  }
  return out;
}

/// dx = (dy - y (y . dy)) / |x|
template <typename T>
Tensor<T> l2_normalize_backward(const Tensor<T>& dout, const Tensor<T>& out, const std::vector<T>& norms) {
  const std::size_t P = out.plane();
  std::vector<double> dot(P, 0.0);
  for (int c = 0; c < out.channels; ++c) {
    const T* y = out.channel(c);
    const T* d = dout.channel(c);
    for (std::size_t i = 0; i < P; ++i) dot[i] += static_cast<double>(y[i]) * d[i];
  }
  Tensor<T> din(out.channels, out.height, out.width);
  for (int c = 0; c < out.channels; ++c) {
    const T* y = out.channel(c);
    const T* d = dout.channel(c);
    T* o = din.channel(c);
    for (std::size_t i = 0; i < P; ++i)
      o[i] = norms[i] < kNormFloor ? T(0) : static_cast<T>((d[i] - y[i] * dot[i]) / norms[i]);
  }
  return din;
}

}  // namespace conceptseg::layers
