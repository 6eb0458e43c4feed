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

// Image containers, PNG/PPM codecs, photometric augmentation and the
// edge-based content probability map used to pick view centers.

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "conceptseg/error.hpp"
#include "conceptseg/rng.hpp"

namespace conceptseg {

/// Three-channel planar (CHW) image with values in [0,1] unless
/// `normalized` is set.
struct ImageTensor {
  int height = 0;
  int width = 0;
  bool normalized = false;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(int h, int w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, fill) {
    if (h < 1 || w < 1) throw InvalidArgument("image dimensions must be positive");
  }

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  float& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  std::span<float> channel(int c) { return {data.data() + c * plane(), plane()}; }
  std::span<const float> channel(int c) const { return {data.data() + c * plane(), plane()}; }

  bool operator==(const ImageTensor&) const = default;
};

/// Nonnegative H x W map summing to one.
struct ProbabilityMap {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  ProbabilityMap() = default;
  /// Zero-filled h x w map.
  ProbabilityMap(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0.0) {}
  ProbabilityMap(int h, int w, std::vector<double> d) : height(h), width(w), data(std::move(d)) {}

  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

// ---------------------------------------------------------------------------
// Codecs
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  if (!std::filesystem::exists(path)) throw FileNotFoundError(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline bool is_png(const std::vector<std::uint8_t>& b) {
  static constexpr std::array<std::uint8_t, 8> sig{137, 80, 78, 71, 13, 10, 26, 10};
  return b.size() >= 8 && std::equal(sig.begin(), sig.end(), b.begin());
}

inline bool is_ppm(const std::vector<std::uint8_t>& b) {
  return b.size() >= 2 && b[0] == 'P' && b[1] == '6';
}

// Parses a binary PPM (P6) header and payload.
inline ImageTensor decode_ppm(const std::vector<std::uint8_t>& b, const std::string& path) {
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_space();
    long v = 0;
    int digits = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos++] - '0');
      if (++digits > 9) throw CorruptDataError("PPM header value too large in " + path);
    }
    if (digits == 0) throw CorruptDataError("malformed PPM header in " + path);
    return v;
  };
  const long w = read_int();
  const long h = read_int();
  const long maxval = read_int();
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
    throw CorruptDataError("invalid PPM dimensions in " + path);
  if (pos >= b.size() || !std::isspace(b[pos])) throw CorruptDataError("malformed PPM header in " + path);
  ++pos;
  const std::size_t bps = maxval < 256 ? 1 : 2;
  const std::size_t need = static_cast<std::size_t>(w) * h * 3 * bps;
  if (b.size() - pos < need) throw CorruptDataError("truncated PPM payload in " + path);
  ImageTensor img(static_cast<int>(h), static_cast<int>(w));
  const double scale = 1.0 / static_cast<double>(maxval);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const std::size_t i = pos + ((static_cast<std::size_t>(y) * w + x) * 3 + c) * bps;
        const unsigned v = bps == 1 ? b[i] : (static_cast<unsigned>(b[i]) << 8) | b[i + 1];
        img.at(c, static_cast<int>(y), static_cast<int>(x)) =
            static_cast<float>(std::min(1.0, v * scale));
      }
  return img;
}

// libpng simplified-API read into an interleaved buffer of the given format.
template <typename Pixel>
std::vector<Pixel> decode_png(const std::vector<std::uint8_t>& b, png_uint_32 format,
                              int& h, int& w, png_uint_32* file_format, const std::string& path) {
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&im, b.data(), b.size()))
    throw CorruptDataError("corrupt PNG " + path + ": " + im.message);
  if (file_format) *file_format = im.format;
  im.format = format;
  std::vector<Pixel> buf(PNG_IMAGE_SIZE(im) / sizeof(Pixel));
  if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = im.message;
    png_image_free(&im);
    throw CorruptDataError("corrupt PNG " + path + ": " + msg);
  }
  h = static_cast<int>(im.height);
  w = static_cast<int>(im.width);
  return buf;
}

inline void encode_png(const std::string& path, const void* pixels, int h, int w, png_uint_32 format) {
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(w);
  im.height = static_cast<png_uint_32>(h);
  im.format = format;
  if (!png_image_write_to_file(&im, path.c_str(), 0, pixels, 0, nullptr))
    throw IoError("cannot write PNG " + path + ": " + im.message);
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace detail

/// Reads a PNG or binary PPM into [0,1] floats. Throws FileNotFoundError,
/// UnsupportedFormatError or CorruptDataError.
inline ImageTensor load_image(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (detail::is_ppm(bytes)) return detail::decode_ppm(bytes, path);
  if (!detail::is_png(bytes)) throw UnsupportedFormatError("not a PNG or P6 PPM file: " + path);
  int h = 0, w = 0;
  const auto buf = detail::decode_png<std::uint8_t>(bytes, PNG_FORMAT_RGB, h, w, nullptr, path);
  ImageTensor img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
  return img;
}

inline std::vector<std::uint8_t> to_rgb8(const ImageTensor& img) {
  std::vector<std::uint8_t> buf(img.plane() * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        buf[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] = detail::to_byte(img.at(c, y, x));
  return buf;
}

/// Interleaved 8-bit RGB raster, the form every visualization is written in.
struct Rgb8Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Rgb8Image() = default;
  Rgb8Image(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}
  std::uint8_t* px(int y, int x) { return &data[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* px(int y, int x) const { return &data[(static_cast<std::size_t>(y) * width + x) * 3]; }
};

inline Rgb8Image to_rgb8_image(const ImageTensor& img) {
  Rgb8Image out;
  out.height = img.height;
  out.width = img.width;
  out.data = to_rgb8(img);
  return out;
}

inline void save_png(const std::string& path, const Rgb8Image& img) {
  detail::encode_png(path, img.data.data(), img.height, img.width, PNG_FORMAT_RGB);
}

inline void save_png(const std::string& path, const ImageTensor& img) {
  save_png(path, to_rgb8_image(img));
}

inline void save_ppm(const std::string& path, const ImageTensor& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  const auto buf = to_rgb8(img);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("cannot write " + path);
}

/// Single-channel integer raster stored as 8- or 16-bit grayscale PNG.
struct GrayRaster {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> data;
};

inline void save_gray_png(const std::string& path, const GrayRaster& r, bool sixteen_bit) {
  if (sixteen_bit) {
    detail::encode_png(path, r.data.data(), r.height, r.width, PNG_FORMAT_LINEAR_Y);
    return;
  }
  std::vector<std::uint8_t> b(r.data.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (r.data[i] > 255) throw InvalidArgument("value exceeds 8-bit range in " + path);
    b[i] = static_cast<std::uint8_t>(r.data[i]);
  }
  detail::encode_png(path, b.data(), r.height, r.width, PNG_FORMAT_GRAY);
}

/// Reads an 8- or 16-bit grayscale PNG without any gamma conversion.
inline GrayRaster load_gray_png(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (!detail::is_png(bytes)) throw UnsupportedFormatError("not a PNG file: " + path);
  png_uint_32 file_format = 0;
  {
    png_image probe;
    std::memset(&probe, 0, sizeof(probe));
    probe.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&probe, bytes.data(), bytes.size()))
      throw CorruptDataError("corrupt PNG " + path + ": " + probe.message);
    file_format = probe.format;
    png_image_free(&probe);
  }
  if (file_format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_COLORMAP))
    throw UnsupportedFormatError("expected a grayscale PNG: " + path);
  GrayRaster r;
  if (file_format & PNG_FORMAT_FLAG_LINEAR) {
    r.data = detail::decode_png<std::uint16_t>(bytes, PNG_FORMAT_LINEAR_Y, r.height, r.width, nullptr, path);
  } else {
    const auto b = detail::decode_png<std::uint8_t>(bytes, PNG_FORMAT_GRAY, r.height, r.width, nullptr, path);
    r.data.assign(b.begin(), b.end());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool operator==(const Box&) const = default;
};

inline Box intersect(const Box& a, const Box& b) {
  return {std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
}

/// Crops `box` and resamples it to out_h x out_w with bilinear filtering
/// (half-pixel centers, edge clamp). A 1:1 scale is an exact copy.
inline ImageTensor crop_resize_bilinear(const ImageTensor& img, const Box& box, int out_h, int out_w) {
  ImageTensor out(out_h, out_w);
  const double sy = static_cast<double>(box.height()) / out_h;
  const double sx = static_cast<double>(box.width()) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, box.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, box.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, box.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, box.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double a = img.at(c, box.y0 + y0, box.x0 + x0);
        const double b = img.at(c, box.y0 + y0, box.x0 + x1);
        const double d = img.at(c, box.y0 + y1, box.x0 + x0);
        const double e = img.at(c, box.y0 + y1, box.x0 + x1);
        const double top = wx == 0.0 ? a : a + (b - a) * wx;
        const double bot = wx == 0.0 ? d : d + (e - d) * wx;
        out.at(c, y, x) = static_cast<float>(wy == 0.0 ? top : top + (bot - top) * wy);
      }
    }
  }
  return out;
}

/// Source coordinate sampled by nearest-neighbour resizing of `in` pixels to `out`.
inline int nearest_source(int out_index, int in_size, int out_size) {
  const int s = static_cast<int>(std::floor((out_index + 0.5) * in_size / static_cast<double>(out_size)));
  return std::clamp(s, 0, in_size - 1);
}

inline void flip_horizontal(ImageTensor& img) {
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y) {
      float* row = &img.at(c, y, 0);
      std::reverse(row, row + img.width);
    }
}

// ---------------------------------------------------------------------------
// Photometric augmentation
// ---------------------------------------------------------------------------

inline constexpr std::array<double, 3> kLumaWeights{0.299, 0.587, 0.114};

inline double luma(const ImageTensor& img, int y, int x) {
  return kLumaWeights[0] * img.at(0, y, x) + kLumaWeights[1] * img.at(1, y, x) +
         kLumaWeights[2] * img.at(2, y, x);
}

inline void clamp_unit(ImageTensor& img) {
  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

inline ImageTensor adjust_brightness(ImageTensor img, double factor) {
  for (float& v : img.data) v = static_cast<float>(v * factor);
  clamp_unit(img);
  return img;
}

// Blend with the mean luma of the whole image.
inline ImageTensor adjust_contrast(ImageTensor img, double factor) {
  double mean = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) mean += luma(img, y, x);
  mean /= static_cast<double>(img.plane());
  for (float& v : img.data) v = static_cast<float>(factor * v + (1.0 - factor) * mean);
  clamp_unit(img);
  return img;
}

// Blend each pixel with its own luma.
inline ImageTensor adjust_saturation(ImageTensor img, double factor) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double g = luma(img, y, x);
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(factor * img.at(c, y, x) + (1.0 - factor) * g);
    }
  clamp_unit(img);
  return img;
}

/// Hue in turns (wrapped), saturation and value in [0, 1].
inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h -= std::floor(h);
  const double h6 = h * 6.0;
  const int sector = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

/// Rotates hue by `shift` turns in HSV space. Achromatic pixels have no hue
/// and are left untouched.
inline ImageTensor adjust_hue(ImageTensor img, double shift) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double r = img.at(0, y, x), g = img.at(1, y, x), b = img.at(2, y, x);
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
      const double delta = mx - mn;
      if (delta <= 0.0) continue;
      double h;
      if (mx == r)
        h = (g - b) / delta;
      else if (mx == g)
        h = 2.0 + (b - r) / delta;
      else
        h = 4.0 + (r - g) / delta;
      const auto rgb = hsv_to_rgb(h / 6.0 + shift, delta / mx, mx);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(rgb[c]);
    }
  clamp_unit(img);
  return img;
}

/// Jitter factors drawn for one call of color_distort.
struct ColorJitter {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;

  static ColorJitter sample(double strength, Rng& rng) {
    ColorJitter j;
    const double a = 0.8 * strength, hmax = 0.2 * strength;
    if (a > 0.0) {
      j.brightness = uniform(rng, 1.0 - a, 1.0 + a);
      j.contrast = uniform(rng, 1.0 - a, 1.0 + a);
      j.saturation = uniform(rng, 1.0 - a, 1.0 + a);
    }
    if (hmax > 0.0) j.hue = uniform(rng, -hmax, hmax);
    j.brightness = std::max(0.0, j.brightness);
    j.contrast = std::max(0.0, j.contrast);
    j.saturation = std::max(0.0, j.saturation);
    return j;
  }
};

inline ImageTensor apply_jitter(ImageTensor img, const ColorJitter& j) {
  if (j.brightness != 1.0) img = adjust_brightness(std::move(img), j.brightness);
  if (j.contrast != 1.0) img = adjust_contrast(std::move(img), j.contrast);
  if (j.saturation != 1.0) img = adjust_saturation(std::move(img), j.saturation);
  if (j.hue != 0.0) img = adjust_hue(std::move(img), j.hue);
  return img;
}

/// Brightness, contrast, saturation and hue jitter with magnitudes
/// proportional to `strength`; output clamped to [0,1].
inline ImageTensor color_distort(const ImageTensor& img, double strength, std::uint64_t seed) {
  if (strength < 0.0) throw InvalidArgument("color_distort: strength must be >= 0");
  Rng rng(seed);
  return apply_jitter(img, ColorJitter::sample(strength, rng));
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

// Mirror index without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2 …).
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

/// Separable Gaussian blur of one plane with reflect padding.
template <typename T>
void blur_plane(std::span<T> plane, int h, int w, double sigma) {
  if (sigma <= 0.0) return;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(plane.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * plane[static_cast<std::size_t>(y) * w + reflect_index(x + i, w)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[static_cast<std::size_t>(reflect_index(y + i, h)) * w + x];
      plane[static_cast<std::size_t>(y) * w + x] = static_cast<T>(acc);
    }
}

inline ImageTensor gaussian_blur(const ImageTensor& img, double sigma) {
  if (sigma < 0.0) throw InvalidArgument("gaussian_blur: sigma must be >= 0");
  ImageTensor out = img;
  if (sigma == 0.0) return out;
  for (int c = 0; c < 3; ++c) blur_plane(out.channel(c), img.height, img.width, sigma);
  return out;
}

/// Per-channel (x - mean) / std, marking the tensor as normalized.
inline ImageTensor normalize_channels(ImageTensor img, const std::array<float, 3>& mean,
                                      const std::array<float, 3>& stddev) {
  for (int c = 0; c < 3; ++c)
    for (float& v : img.channel(c)) v = (v - mean[c]) / stddev[c];
  img.normalized = true;
  return img;
}

// ---------------------------------------------------------------------------
// Canny edges and content probability
// ---------------------------------------------------------------------------

/// Binary Canny edge map (1 = edge). Thresholds are fractions of the
/// maximum Sobel gradient magnitude.
inline std::vector<std::uint8_t> canny_edges(const ImageTensor& img, double low_frac, double high_frac) {
  if (low_frac < 0.0 || low_frac > high_frac)
    throw InvalidArgument("canny: require 0 <= low <= high");
  const int h = img.height, w = img.width;
  std::vector<double> gray(img.plane());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) gray[static_cast<std::size_t>(y) * w + x] = luma(img, y, x);
  auto g = [&](int y, int x) { return gray[static_cast<std::size_t>(reflect_index(y, h)) * w + reflect_index(x, w)]; };

  std::vector<double> mag(gray.size()), gx(gray.size()), gy(gray.size());
  double max_mag = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = (g(y - 1, x + 1) + 2 * g(y, x + 1) + g(y + 1, x + 1)) -
                        (g(y - 1, x - 1) + 2 * g(y, x - 1) + g(y + 1, x - 1));
      const double dy = (g(y + 1, x - 1) + 2 * g(y + 1, x) + g(y + 1, x + 1)) -
                        (g(y - 1, x - 1) + 2 * g(y - 1, x) + g(y - 1, x + 1));
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      gx[i] = dx;
      gy[i] = dy;
      mag[i] = std::hypot(dx, dy);
      max_mag = std::max(max_mag, mag[i]);
    }
  std::vector<std::uint8_t> edges(gray.size(), 0);
  if (max_mag <= 1e-12) return edges;

  auto m = [&](int y, int x) {
    return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : mag[static_cast<std::size_t>(y) * w + x];
  };
  // 0 = non-edge, 1 = weak, 2 = strong after non-maximum suppression.
  std::vector<std::uint8_t> cls(gray.size(), 0);
  const double lo = low_frac * max_mag, hi = high_frac * max_mag;
  constexpr double kPi = 3.14159265358979323846;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (mag[i] <= 0.0) continue;
      double angle = std::atan2(gy[i], gx[i]) * 180.0 / kPi;
      if (angle < 0) angle += 180.0;
      int ox, oy;
      if (angle < 22.5 || angle >= 157.5) {
        ox = 1, oy = 0;
      } else if (angle < 67.5) {
        ox = 1, oy = 1;
      } else if (angle < 112.5) {
        ox = 0, oy = 1;
      } else {
        ox = -1, oy = 1;
      }
      const double before = m(y - oy, x - ox), after = m(y + oy, x + ox);
      if (!(mag[i] > before && mag[i] >= after)) continue;
      if (mag[i] >= hi)
        cls[i] = 2;
      else if (mag[i] >= lo)
        cls[i] = 1;
    }
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < cls.size(); ++i)
    if (cls[i] == 2) {
      edges[i] = 1;
      stack.push_back(i);
    }
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
        if (cls[j] == 1 && !edges[j]) {
          edges[j] = 1;
          stack.push_back(j);
        }
      }
  }
  return edges;
}

inline ProbabilityMap uniform_probability(int h, int w) {
  ProbabilityMap p{h, w, std::vector<double>(static_cast<std::size_t>(h) * w, 1.0 / (static_cast<double>(h) * w))};
  return p;
}

/// Gaussian-smoothed Canny edge map normalized to a distribution. Falls back
/// to the uniform map when no edges are found.
inline ProbabilityMap content_probability(const ImageTensor& img, double canny_low = 0.1,
                                          double canny_high = 0.2, double smooth_sigma = 5.0) {
  const auto edges = canny_edges(img, canny_low, canny_high);
  ProbabilityMap p{img.height, img.width, std::vector<double>(edges.begin(), edges.end())};
  blur_plane(std::span<double>(p.data), img.height, img.width, smooth_sigma);
  double sum = 0.0;
  for (double v : p.data) sum += v;
  if (!(sum > 0.0)) return uniform_probability(img.height, img.width);
  for (double& v : p.data) v /= sum;
  return p;
}

}  // namespace conceptseg
