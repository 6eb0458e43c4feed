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

// Dense encoder f: view image (3 x h x w) -> unit-norm embedding map
// (D x h x w). Either a single convolution (for tests and gradient
// checks) or a four-stage encoder/decoder with skip connections.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "conceptseg/error.hpp"
#include "conceptseg/image.hpp"
#include "conceptseg/layers.hpp"
#include "conceptseg/rng.hpp"
#include "conceptseg/serialize.hpp"
#include "conceptseg/tensor.hpp"

namespace conceptseg {

enum class Architecture : std::uint32_t { kSingleConv = 1, kUNet = 2 };

struct EncoderConfig {
  Architecture arch = Architecture::kUNet;
  int in_channels = 3;
  int width = 16;
  int embed_dim = 64;
  int groups = 8;

  int downsampling() const { return arch == Architecture::kUNet ? 8 : 1; }
  bool operator==(const EncoderConfig&) const = default;
};

/// Embedding map; `normalized` is set when every pixel vector is unit length.
template <typename T>
struct EmbeddingMap : Tensor<T> {
  bool normalized = false;

  EmbeddingMap() = default;
  EmbeddingMap(int d, int h, int w) : Tensor<T>(d, h, w) {}
  int dim() const { return this->channels; }
};

template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  std::vector<Parameter<T>> tensors;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.value.size();
    return n;
  }
  bool operator==(const EncoderParams& o) const {
    if (!(config == o.config) || tensors.size() != o.tensors.size()) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i)
      if (tensors[i].name != o.tensors[i].name || tensors[i].shape != o.tensors[i].shape ||
          tensors[i].value != o.tensors[i].value)
        return false;
    return true;
  }
};

/// Gradient buffers aligned with EncoderParams::tensors.
template <typename T>
using ParamGrads = std::vector<std::vector<T>>;

template <typename T>
ParamGrads<T> zero_grads(const EncoderParams<T>& p) {
  ParamGrads<T> g;
  for (const auto& t : p.tensors) g.emplace_back(t.value.size(), T(0));
  return g;
}

namespace detail {

struct BlockSpec {
  const char* name;
  layers::ConvShape conv;
  bool norm_act;     // GroupNorm after the conv
  bool relu = true;  // ReLU after the norm
};

inline std::vector<BlockSpec> block_specs(const EncoderConfig& c) {
  if (c.arch == Architecture::kSingleConv) return {{"head", {c.in_channels, c.embed_dim, 3, 1}, false}};
  const int w = c.width;
  return {
      {"enc0", {c.in_channels, w, 3, 1}, true}, {"enc1", {w, 2 * w, 3, 2}, true},
      {"enc2", {2 * w, 4 * w, 3, 2}, true},     {"enc3", {4 * w, 4 * w, 3, 2}, true},
      {"dec2", {4 * w, 2 * w, 3, 1}, true},     {"dec1", {2 * w, w, 3, 1}, true},
      // no ReLU into the head: zero-mean features keep the embeddings from
      // sharing one dominant direction
      {"dec0", {w, w, 3, 1}, true, false},      {"head", {w, c.embed_dim, 1, 1}, false},
  };
}

}  // namespace detail

inline void validate(const EncoderConfig& c) {
  if (c.embed_dim < 1) throw InvalidArgument("encoder: embedding dimension must be >= 1");
  if (c.in_channels < 1) throw InvalidArgument("encoder: need at least one input channel");
  if (c.arch == Architecture::kUNet) {
    if (c.width < 1 || c.groups < 1 || c.width % c.groups != 0)
      throw InvalidArgument("encoder: width must be a positive multiple of the group count");
  }
}

/// He (fan-in) normal weights, zero biases, identity GroupNorm affine.
template <typename T>
EncoderParams<T> init_params(std::uint64_t seed, const EncoderConfig& config) {
  validate(config);
  EncoderParams<T> p;
  p.config = config;
  Rng rng(seed);
  for (const auto& b : detail::block_specs(config)) {
    const auto& s = b.conv;
    Parameter<T> w{std::string(b.name) + ".conv.weight", {s.out_channels, s.in_channels, s.kernel, s.kernel}, {}};
    const double stddev = std::sqrt(2.0 / (static_cast<double>(s.in_channels) * s.kernel * s.kernel));
    std::normal_distribution<double> normal(0.0, stddev);
    w.value.resize(s.weight_count());
    for (T& v : w.value) v = static_cast<T>(normal(rng));
    p.tensors.push_back(std::move(w));
    p.tensors.push_back({std::string(b.name) + ".conv.bias", {s.out_channels},
                         std::vector<T>(s.out_channels, T(0))});
    if (b.norm_act) {
      p.tensors.push_back({std::string(b.name) + ".norm.gamma", {s.out_channels},
                           std::vector<T>(s.out_channels, T(1))});
      p.tensors.push_back({std::string(b.name) + ".norm.beta", {s.out_channels},
                           std::vector<T>(s.out_channels, T(0))});
    }
  }
  return p;
}

inline EncoderConfig single_conv_config(int embed_dim, int in_channels = 3) {
  EncoderConfig c;
  c.arch = Architecture::kSingleConv;
  c.in_channels = in_channels;
  c.embed_dim = embed_dim;
  return c;
}

template <typename T>
struct BlockCache {
  layers::ConvCache<T> conv;
  layers::GroupNormCache<T> norm;
  Tensor<T> out;
};

/// Activations retained by forward() for backward().
template <typename T>
struct ForwardCache {
  std::vector<BlockCache<T>> blocks;
  Tensor<T> pre_norm;
  std::vector<T> norms;
  EmbeddingMap<T> output;
};

template <typename T>
Tensor<T> to_tensor(const ImageTensor& img) {
  Tensor<T> t(3, img.height, img.width);
  for (std::size_t i = 0; i < img.data.size(); ++i) t.data[i] = static_cast<T>(img.data[i]);
  return t;
}

namespace detail {

template <typename T>
struct BlockRefs {
  std::size_t weight, bias, gamma, beta;
};

template <typename T>
std::vector<BlockRefs<T>> block_refs(const EncoderConfig& c) {
  std::vector<BlockRefs<T>> refs;
  std::size_t i = 0;
  for (const auto& b : block_specs(c)) {
    if (b.norm_act) {
      refs.push_back({i, i + 1, i + 2, i + 3});
      i += 4;
    } else {
      refs.push_back({i, i + 1, 0, 0});
      i += 2;
    }
  }
  return refs;
}

template <typename T>
Tensor<T> block_forward(const EncoderParams<T>& p, std::size_t b, const Tensor<T>& in, BlockCache<T>& cache) {
  const auto specs = block_specs(p.config);
  const auto refs = block_refs<T>(p.config);
  const auto& s = specs[b];
  const auto& r = refs[b];
  Tensor<T> x = layers::conv_forward(s.conv, p.tensors[r.weight].value, p.tensors[r.bias].value, in, cache.conv);
  if (!s.norm_act) return x;
  x = layers::group_norm_forward(x, p.config.groups, p.tensors[r.gamma].value, p.tensors[r.beta].value, cache.norm);
  if (s.relu) layers::relu_inplace(x);
  cache.out = x;
  return x;
}

template <typename T>
Tensor<T> block_backward(const EncoderParams<T>& p, std::size_t b, Tensor<T> dout, const BlockCache<T>& cache,
                         ParamGrads<T>& g, bool need_input_grad) {
  const auto specs = block_specs(p.config);
  const auto refs = block_refs<T>(p.config);
  const auto& s = specs[b];
  const auto& r = refs[b];
  if (s.norm_act) {
    if (s.relu) layers::relu_backward_inplace(dout, cache.out);
    dout = layers::group_norm_backward(dout, p.config.groups, p.tensors[r.gamma].value, cache.norm, g[r.gamma],
                                       g[r.beta]);
  }
  return layers::conv_backward(s.conv, p.tensors[r.weight].value, cache.conv, dout, g[r.weight], g[r.bias],
                               need_input_grad);
}

}  // namespace detail

/// Runs the encoder on one view. Output spatial size equals input size;
/// pixel vectors are L2-normalized last.
template <typename T>
EmbeddingMap<T> forward(const EncoderParams<T>& p, const Tensor<T>& input, ForwardCache<T>& cache) {
  const int f = p.config.downsampling();
  if (input.channels != p.config.in_channels) throw InvalidArgument("encoder: wrong number of input channels");
  if (input.height % f != 0 || input.width % f != 0)
    throw InvalidArgument("encoder: view size must be divisible by " + std::to_string(f));
  const std::size_t nblocks = detail::block_specs(p.config).size();
  cache.blocks.assign(nblocks, {});
  Tensor<T> y;
  if (p.config.arch == Architecture::kSingleConv) {
    y = detail::block_forward(p, 0, input, cache.blocks[0]);
  } else {
    auto& c = cache.blocks;
    const Tensor<T> x0 = detail::block_forward(p, 0, input, c[0]);
    const Tensor<T> x1 = detail::block_forward(p, 1, x0, c[1]);
    const Tensor<T> x2 = detail::block_forward(p, 2, x1, c[2]);
    const Tensor<T> x3 = detail::block_forward(p, 3, x2, c[3]);
    Tensor<T> u = layers::upsample_forward(x3, x2.height, x2.width);
    add_inplace(u, x2);
    const Tensor<T> d2 = detail::block_forward(p, 4, u, c[4]);
    u = layers::upsample_forward(d2, x1.height, x1.width);
    add_inplace(u, x1);
    const Tensor<T> d1 = detail::block_forward(p, 5, u, c[5]);
    u = layers::upsample_forward(d1, x0.height, x0.width);
    add_inplace(u, x0);
    const Tensor<T> d0 = detail::block_forward(p, 6, u, c[6]);
    y = detail::block_forward(p, 7, d0, c[7]);
  }
  Tensor<T> z = layers::l2_normalize_forward(y, cache.norms);
  cache.pre_norm = std::move(y);
  EmbeddingMap<T> out;
  static_cast<Tensor<T>&>(out) = std::move(z);
  out.normalized = true;
  cache.output = out;
  return out;
}

template <typename T>
EmbeddingMap<T> forward(const EncoderParams<T>& p, const Tensor<T>& input) {
  ForwardCache<T> cache;
  return forward(p, input, cache);
}

template <typename T>
EmbeddingMap<T> forward(const EncoderParams<T>& p, const ImageTensor& view) {
  return forward(p, to_tensor<T>(view));
}

/// Accumulates parameter gradients of <upstream, f(x)> into `grads`.
template <typename T>
void backward(const EncoderParams<T>& p, const ForwardCache<T>& cache, const Tensor<T>& upstream, ParamGrads<T>& grads) {
  if (!upstream.same_shape(cache.output)) throw InvalidArgument("encoder backward: gradient shape mismatch");
  const Tensor<T> dy = layers::l2_normalize_backward(upstream, cache.output, cache.norms);
  const auto& c = cache.blocks;
  if (p.config.arch == Architecture::kSingleConv) {
    detail::block_backward(p, 0, dy, c[0], grads, false);
    return;
  }
  const Tensor<T>& d2 = c[4].out;
  const Tensor<T>& d1 = c[5].out;
  const Tensor<T>& x3 = c[3].out;
  // skip connections: u_k = up(deeper) + x_k, so d(x_k) picks up d(u_k)
  Tensor<T> g = detail::block_backward(p, 7, dy, c[7], grads, true);
  Tensor<T> gu0 = detail::block_backward(p, 6, std::move(g), c[6], grads, true);
  Tensor<T> gx0 = gu0;
  Tensor<T> gu1 = detail::block_backward(p, 5, layers::upsample_backward(gu0, d1.height, d1.width), c[5], grads, true);
  Tensor<T> gx1 = gu1;
  Tensor<T> gu2 = detail::block_backward(p, 4, layers::upsample_backward(gu1, d2.height, d2.width), c[4], grads, true);
  Tensor<T> gx2 = gu2;
  Tensor<T> gx3 = layers::upsample_backward(gu2, x3.height, x3.width);
  add_inplace(gx2, detail::block_backward(p, 3, std::move(gx3), c[3], grads, true));
  add_inplace(gx1, detail::block_backward(p, 2, std::move(gx2), c[2], grads, true));
  add_inplace(gx0, detail::block_backward(p, 1, std::move(gx1), c[1], grads, true));
  detail::block_backward(p, 0, std::move(gx0), c[0], grads, false);
}

// ---------------------------------------------------------------------------
// Serialization: header (arch, dims) + named tensors with float32 payload.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_encoder(BinaryWriter& w, const EncoderParams<T>& p) {
  w.put_tag("ENCD");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.config.arch));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.config.in_channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.config.width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.config.embed_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.config.groups));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.tensors.size()));
  for (const auto& t : p.tensors) {
    w.put_string(t.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (T v : t.value) w.put<float>(static_cast<float>(v));
  }
}

template <typename T>
EncoderParams<T> read_encoder(BinaryReader& r) {
  r.expect_tag("ENCD");
  EncoderConfig c;
  const auto arch = r.get<std::uint32_t>();
  if (arch != 1 && arch != 2) throw CorruptDataError("checkpoint: unknown encoder architecture");
  c.arch = static_cast<Architecture>(arch);
  c.in_channels = static_cast<int>(r.get<std::uint32_t>());
  c.width = static_cast<int>(r.get<std::uint32_t>());
  c.embed_dim = static_cast<int>(r.get<std::uint32_t>());
  c.groups = static_cast<int>(r.get<std::uint32_t>());
  constexpr int kMaxDim = 1 << 14;
  if (c.in_channels > kMaxDim || c.width > kMaxDim || c.embed_dim > kMaxDim || c.groups > kMaxDim)
    throw CorruptDataError("checkpoint: implausible encoder dimensions");
  try {
    validate(c);
  } catch (const InvalidArgument& e) {
    throw CorruptDataError(std::string("checkpoint: ") + e.what());
  }
  EncoderParams<T> p = init_params<T>(0, c);
  const auto count = r.get<std::uint32_t>();
  if (count != p.tensors.size()) throw CorruptDataError("checkpoint: tensor count does not match architecture");
  for (auto& t : p.tensors) {
    if (r.get_string() != t.name) throw CorruptDataError("checkpoint: unexpected tensor name");
    const auto nd = r.get<std::uint32_t>();
    if (nd != t.shape.size()) throw CorruptDataError("checkpoint: bad tensor rank for " + t.name);
    for (int d : t.shape)
      if (r.get<std::uint32_t>() != static_cast<std::uint32_t>(d))
        throw CorruptDataError("checkpoint: bad tensor shape for " + t.name);
    for (T& v : t.value) v = static_cast<T>(r.get<float>());
  }
  return p;
}

template <typename T>
void save_encoder(const std::string& path, const EncoderParams<T>& p) {
  BinaryWriter w;
  w.put_tag("CSEG");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put_tag("ENCO");
  write_encoder(w, p);
  w.put_tag("END.");
  w.write_file(path);
}

template <typename T>
EncoderParams<T> load_encoder(const std::string& path) {
  auto r = BinaryReader::from_file(path);
  r.expect_tag("CSEG");
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw VersionError("unsupported checkpoint version in " + path);
  r.expect_tag("ENCO");
  auto p = read_encoder<T>(r);
  r.expect_tag("END.");
  return p;
}

}  // namespace conceptseg
