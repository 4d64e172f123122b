#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "posterpp/error.hpp"
#include "posterpp/tensor.hpp"

namespace posterpp {

/// Decoded binary PGM (P5) or PPM (P6) image, 8-bit samples.
struct Image8 {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

namespace detail {

inline std::size_t pnm_field(std::istream& in, const std::string& path) {
  int c = in.get();
  while (in && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (in && c != '\n') c = in.get();
    }
    c = in.get();
  }
  std::size_t v = 0;
  bool any = false;
  while (in && std::isdigit(c)) {
    v = v * 10 + static_cast<std::size_t>(c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw IoError("'" + path + "': malformed PNM header");
  return v;  // the single whitespace after the field has been consumed
}

}  // namespace detail

inline Image8 read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  char m[2] = {};
  in.read(m, 2);
  if (m[0] != 'P' || (m[1] != '5' && m[1] != '6')) throw IoError("'" + path + "' is not a binary PGM/PPM file");
  Image8 img;
  img.channels = m[1] == '5' ? 1 : 3;
  img.width = detail::pnm_field(in, path);
  img.height = detail::pnm_field(in, path);
  const std::size_t maxval = detail::pnm_field(in, path);
  if (maxval != 255) throw IoError("'" + path + "': only 8-bit images (maxval 255) are supported");
  if (img.width == 0 || img.height == 0) throw IoError("'" + path + "': empty image");
  img.pixels.resize(img.width * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw IoError("'" + path + "': pixel data truncated");
  return img;
}

inline void write_pnm(const std::string& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw ContractError("write_pnm: 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image '" + path + "'");
  out << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

/// [3 x H x W] tensor with samples scaled to [0, 1]; gray input is
/// replicated over the three channels.
inline Tensor image_to_tensor(const Image8& img) {
  const std::size_t H = img.height, W = img.width;
  std::vector<double> v(3 * H * W);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < H * W; ++i) {
      const std::size_t src = img.channels == 1 ? i : i * 3 + c;
      v[c * H * W + i] = img.pixels[src] / 255.0;
    }
  return Tensor({3, H, W}, std::move(v));
}

/// Inverse of image_to_tensor for values in [0, 1] (clamped, rounded).
inline Image8 tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
    throw ShapeError("tensor_to_image expects [1|3 x H x W], got " + shape_str(t.shape()));
  }
  Image8 img{t.dim(2), t.dim(1), t.dim(0), {}};
  const std::size_t hw = img.width * img.height;
  img.pixels.resize(hw * img.channels);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t i = 0; i < hw; ++i) {
      const double v = std::clamp(t[c * hw + i], 0.0, 1.0);
      img.pixels[i * img.channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return img;
}

/// Min-max normalises `values` to 0..255. A constant map becomes all zeros.
inline std::vector<std::uint8_t> to_gray8(std::span<const double> values) {
  std::vector<std::uint8_t> out(values.size(), 0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (!(*hi > *lo)) return out;
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / span));
  }
  return out;
}

}  // namespace posterpp
