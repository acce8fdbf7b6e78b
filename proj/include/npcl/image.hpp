#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "npcl/error.hpp"

namespace npcl {

// Interleaved RGB image, values in [0, 1], row-major (y, x, channel).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  float& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  bool empty() const { return rgb.empty(); }
  bool operator==(const Image&) const = default;
};

inline float quantize_u8(float v) {
  return std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
}

inline Image crop(const Image& src, int x, int y, int w, int h) {
  detail::require<data_error>(x >= 0 && y >= 0 && x + w <= src.width && y + h <= src.height,
                              "crop window outside image");
  Image out(w, h);
  for (int r = 0; r < h; ++r) {
    const float* from = &src.rgb[(static_cast<std::size_t>(y + r) * src.width + x) * 3];
    std::copy(from, from + static_cast<std::size_t>(w) * 3,
              &out.rgb[static_cast<std::size_t>(r) * w * 3]);
  }
  return out;
}

inline Image flip_horizontal(const Image& src) {
  Image out(src.width, src.height);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(src.width - 1 - x, y, c) = src.at(x, y, c);
  return out;
}

// Bilinear resample of the window [x0, x0+w) x [y0, y0+h) (fractional
// coordinates allowed) onto an out_w x out_h grid, pixel-center aligned.
inline Image resample(const Image& src, double x0, double y0, double w, double h, int out_w,
                      int out_h) {
  detail::require<data_error>(out_w > 0 && out_h > 0 && w > 0 && h > 0, "empty resample window");
  Image out(out_w, out_h);
  const double sx = w / out_w;
  const double sy = h / out_h;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = y0 + (oy + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
    const int y_lo = static_cast<int>(std::floor(fy));
    const int y_hi = std::min(y_lo + 1, src.height - 1);
    const float ty = static_cast<float>(fy - y_lo);
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = x0 + (ox + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
      const int x_lo = static_cast<int>(std::floor(fx));
      const int x_hi = std::min(x_lo + 1, src.width - 1);
      const float tx = static_cast<float>(fx - x_lo);
      for (int c = 0; c < 3; ++c) {
        const float top = src.at(x_lo, y_lo, c) * (1 - tx) + src.at(x_hi, y_lo, c) * tx;
        const float bot = src.at(x_lo, y_hi, c) * (1 - tx) + src.at(x_hi, y_hi, c) * tx;
        out.at(ox, oy, c) = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

inline Image resize(const Image& src, int out_w, int out_h) {
  if (src.width == out_w && src.height == out_h) return src;
  return resample(src, 0, 0, src.width, src.height, out_w, out_h);
}

}  // namespace npcl
