#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "npcl/error.hpp"
#include "npcl/image.hpp"
#include "npcl/random.hpp"

namespace npcl {

// Stochastic pretraining view policy (SupCon-style defaults).
struct AugmentPolicy {
  int target_size = 128;
  double scale_min = 0.2;
  double scale_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
  double flip_prob = 0.5;
  double jitter_prob = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;  // fraction of a full hue turn
  double grayscale_prob = 0.2;
  int max_crop_attempts = 100;

  void validate() const {
    using detail::require;
    require<config_error>(target_size > 0, "augment.target_size must be positive");
    require<config_error>(scale_min > 0 && scale_min <= scale_max && scale_max <= 1.0,
                          "augment crop scale range must lie in (0, 1]");
    require<config_error>(ratio_min > 0 && ratio_min <= ratio_max, "augment crop ratio range invalid");
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    require<config_error>(prob(flip_prob) && prob(jitter_prob) && prob(grayscale_prob),
                          "augment probabilities must be in [0, 1]");
    require<config_error>(brightness >= 0 && contrast >= 0 && saturation >= 0 && brightness < 1 &&
                              contrast < 1 && saturation < 1,
                          "augment jitter strengths must be in [0, 1)");
    require<config_error>(hue >= 0 && hue <= 0.5, "augment.hue must be in [0, 0.5]");
    require<config_error>(max_crop_attempts >= 1, "augment.max_crop_attempts must be >= 1");
  }
};

struct EvalTransform {
  int resize_size = 256;
  int crop_size = 224;
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> stddev{0.229f, 0.224f, 0.225f};

  void validate() const {
    using detail::require;
    require<config_error>(resize_size > 0 && crop_size > 0, "eval transform sizes must be positive");
    require<config_error>(crop_size <= resize_size, "eval crop_size must not exceed resize_size");
    for (float s : stddev) require<config_error>(s > 0, "eval normalization std must be positive");
  }
};

struct CropWindow {
  int x = 0, y = 0, w = 0, h = 0;
};

inline float luminance(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

inline void adjust_brightness(Image& img, float factor) {
  for (float& v : img.rgb) v = std::clamp(v * factor, 0.0f, 1.0f);
}

inline void adjust_contrast(Image& img, float factor) {
  double sum = 0;
  for (std::size_t i = 0; i < img.rgb.size(); i += 3) sum += luminance(img.rgb[i], img.rgb[i + 1], img.rgb[i + 2]);
  const auto mean = static_cast<float>(sum / static_cast<double>(img.rgb.size() / 3));
  for (float& v : img.rgb) v = std::clamp((v - mean) * factor + mean, 0.0f, 1.0f);
}

inline void adjust_saturation(Image& img, float factor) {
  for (std::size_t i = 0; i < img.rgb.size(); i += 3) {
    const float g = luminance(img.rgb[i], img.rgb[i + 1], img.rgb[i + 2]);
    for (std::size_t c = 0; c < 3; ++c) img.rgb[i + c] = std::clamp((img.rgb[i + c] - g) * factor + g, 0.0f, 1.0f);
  }
}

// Rotates hue by `shift` turns (HSV space).
inline void adjust_hue(Image& img, float shift) {
  for (std::size_t i = 0; i < img.rgb.size(); i += 3) {
    const float r = img.rgb[i], g = img.rgb[i + 1], b = img.rgb[i + 2];
    const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const float delta = mx - mn;
    if (delta <= 0.0f) continue;
    float h;
    if (mx == r)
      h = (g - b) / delta;
    else if (mx == g)
      h = 2.0f + (b - r) / delta;
    else
      h = 4.0f + (r - g) / delta;
    h = h / 6.0f + shift;
    h -= std::floor(h);
    const float s = delta / mx, v = mx;
    const float hh = h * 6.0f;
    const int sector = static_cast<int>(hh) % 6;
    const float f = hh - std::floor(hh);
    const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    float out[3];
    switch (sector) {
      case 0: out[0] = v, out[1] = t, out[2] = p; break;
      case 1: out[0] = q, out[1] = v, out[2] = p; break;
      case 2: out[0] = p, out[1] = v, out[2] = t; break;
      case 3: out[0] = p, out[1] = q, out[2] = v; break;
      case 4: out[0] = t, out[1] = p, out[2] = v; break;
      default: out[0] = v, out[1] = p, out[2] = q; break;
    }
    for (std::size_t c = 0; c < 3; ++c) img.rgb[i + c] = std::clamp(out[c], 0.0f, 1.0f);
  }
}

inline void to_grayscale(Image& img) {
  for (std::size_t i = 0; i < img.rgb.size(); i += 3) {
    const float g = luminance(img.rgb[i], img.rgb[i + 1], img.rgb[i + 2]);
    img.rgb[i] = img.rgb[i + 1] = img.rgb[i + 2] = g;
  }
}

// Samples a random-resized-crop window. Each attempt uses a fresh sub-seed.
inline CropWindow sample_crop(int width, int height, const AugmentPolicy& p, std::uint64_t seed) {
  const double area = static_cast<double>(width) * height;
  for (int attempt = 0; attempt < p.max_crop_attempts; ++attempt) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(attempt)}));
    const double target = area * rng.uniform(p.scale_min, p.scale_max);
    const double log_ratio = rng.uniform(std::log(p.ratio_min), std::log(p.ratio_max));
    const double ratio = std::exp(log_ratio);
    const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w >= 1 && h >= 1 && w <= width && h <= height) {
      return CropWindow{static_cast<int>(rng.between(0, width - w)), static_cast<int>(rng.between(0, height - h)), w,
                        h};
    }
  }
  throw data_error("augment: no valid crop window after " + std::to_string(p.max_crop_attempts) + " attempts");
}

// One stochastic view: random resized crop, optional horizontal flip, colour
// jitter, optional grayscale, at target_size^2. Pure in (patch, policy, seed).
inline Image make_view(const Image& patch, const AugmentPolicy& p, std::uint64_t seed) {
  detail::require<data_error>(patch.width >= 1 && patch.width == patch.height, "augment: patch must be square");
  const CropWindow win = sample_crop(patch.width, patch.height, p, derive_seed(seed, {0}));
  Image view = resample(patch, win.x, win.y, win.w, win.h, p.target_size, p.target_size);

  Rng rng(derive_seed(seed, {1}));
  if (rng.bernoulli(p.flip_prob)) view = flip_horizontal(view);
  if (rng.bernoulli(p.jitter_prob)) {
    adjust_brightness(view, static_cast<float>(rng.uniform(1 - p.brightness, 1 + p.brightness)));
    adjust_contrast(view, static_cast<float>(rng.uniform(1 - p.contrast, 1 + p.contrast)));
    adjust_saturation(view, static_cast<float>(rng.uniform(1 - p.saturation, 1 + p.saturation)));
    adjust_hue(view, static_cast<float>(rng.uniform(-p.hue, p.hue)));
  }
  if (rng.bernoulli(p.grayscale_prob)) to_grayscale(view);
  for (float& v : view.rgb) v = std::clamp(v, 0.0f, 1.0f);
  return view;
}

// Per-channel (x - mean) / std, in place.
inline void normalize(Image& img, const std::array<float, 3>& mean, const std::array<float, 3>& stddev) {
  for (std::size_t i = 0; i < img.rgb.size(); ++i) {
    const std::size_t c = i % 3;
    img.rgb[i] = (img.rgb[i] - mean[c]) / stddev[c];
  }
}

// Deterministic evaluation transform: resize, exact center crop, normalize.
inline Image eval_view(const Image& patch, const EvalTransform& t) {
  detail::require<data_error>(patch.width >= 1 && patch.width == patch.height, "eval transform: patch must be square");
  Image resized = resize(patch, t.resize_size, t.resize_size);
  const int offset = (t.resize_size - t.crop_size) / 2;
  Image out = crop(resized, offset, offset, t.crop_size, t.crop_size);
  normalize(out, t.mean, t.stddev);
  return out;
}

}  // namespace npcl
