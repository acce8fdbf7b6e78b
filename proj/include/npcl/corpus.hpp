#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "npcl/error.hpp"
#include "npcl/image.hpp"
#include "npcl/random.hpp"

namespace npcl {

constexpr int kMaxNearby = 8;

struct CorpusConfig {
  int num_unlabeled_slides = 8;
  int num_train_slides = 2;
  int num_test_slides = 2;
  int slide_size = 1024;
  int patch_size = 64;
  int num_classes = 6;
  // Unlabeled patches per slide; each N-variant takes floor(budget/(N+1)) centers.
  int group_budget = 100;
  std::vector<int> nearby = {0, 4};
  // Labeled patches per train/test slide; 0 takes every grid cell.
  int labeled_per_slide = 0;
  int regions_per_slide = 12;
  // Per-slide multiplicative colour variation, mimicking stain differences.
  double stain_jitter = 0.12;
  // Smooth within-slide stain variation: a per-channel multiplicative field of
  // this amplitude whose correlation length is stain_field_scale patches, so
  // adjacent patches share tissue but not exact colour.
  double stain_field = 0.15;
  double stain_field_scale = 1.0;
  std::uint64_t texture_seed = 2023;

  void validate() const {
    using detail::require;
    require<config_error>(patch_size >= 1, "corpus.patch_size must be positive");
    require<config_error>(slide_size >= 3 * patch_size, "corpus.slide_size must be >= 3 * patch_size");
    require<config_error>(slide_size % patch_size == 0,
                          "corpus.slide_size must be a multiple of patch_size");
    require<config_error>(num_classes >= 2 && num_classes <= 255, "corpus.num_classes must be in [2, 255]");
    require<config_error>(num_unlabeled_slides >= 0 && num_train_slides >= 0 && num_test_slides >= 0,
                          "corpus slide counts must be non-negative");
    require<config_error>(group_budget >= 1, "corpus.group_budget must be positive");
    require<config_error>(regions_per_slide >= num_classes,
                          "corpus.regions_per_slide must be >= num_classes");
    require<config_error>(stain_jitter >= 0.0 && stain_jitter < 1.0, "corpus.stain_jitter must be in [0, 1)");
    require<config_error>(stain_field >= 0.0 && stain_field < 1.0, "corpus.stain_field must be in [0, 1)");
    require<config_error>(stain_field_scale > 0.0, "corpus.stain_field_scale must be positive");
    require<config_error>(labeled_per_slide >= 0, "corpus.labeled_per_slide must be non-negative");
    for (int n : nearby)
      require<config_error>(n >= 0 && n <= kMaxNearby,
                            "nearby count " + std::to_string(n) + " outside [0, 8]: the neighbourhood has 8 cells");
  }
};

struct SlideImage {
  std::string slide_id;
  Image pixels;
  std::vector<std::uint8_t> mask;  // class id per pixel, row-major
  int num_classes = 0;

  int width() const { return pixels.width; }
  int height() const { return pixels.height; }
  int class_at(int x, int y) const { return mask[static_cast<std::size_t>(y) * pixels.width + x]; }
  bool operator==(const SlideImage&) const = default;
};

enum class Split { unlabeled, train, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::unlabeled: return "unlabeled";
    case Split::train: return "train";
    case Split::test: return "test";
  }
  return "?";
}

// The 8-neighbourhood in row-major order, in units of one patch side.
inline constexpr std::array<std::array<int, 2>, 8> kNeighborOffsets = {{
    {-1, -1}, {0, -1}, {1, -1}, {-1, 0}, {1, 0}, {-1, 1}, {0, 1}, {1, 1},
}};

struct PatchRecord {
  std::string slide_id;
  int x = 0;
  int y = 0;
  int size = 0;
  int neighbor = -1;  // -1 for the center patch, else index into kNeighborOffsets
  long long group_id = 0;
  std::optional<int> label;
  Split split = Split::unlabeled;

  bool is_center() const { return neighbor < 0; }
  bool operator==(const PatchRecord&) const = default;
};

struct PatchGroup {
  PatchRecord center;
  std::vector<PatchRecord> nearby;

  std::size_t size() const { return 1 + nearby.size(); }
};

inline int unlabeled_quota(int group_budget, int nearby) { return group_budget / (nearby + 1); }

namespace detail {

// Lattice value noise in [-1, 1], smooth (C1) interpolation.
inline double lattice(std::uint64_t seed, long long ix, long long iy) {
  const auto h = mix64(seed ^ mix64(static_cast<std::uint64_t>(ix) * 0x9E3779B1ull +
                                    static_cast<std::uint64_t>(iy) * 0x85EBCA77ull));
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

inline double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<long long>(fx), iy = static_cast<long long>(fy);
  double tx = x - fx, ty = y - fy;
  tx = tx * tx * (3 - 2 * tx);
  ty = ty * ty * (3 - 2 * ty);
  const double a = lattice(seed, ix, iy), b = lattice(seed, ix + 1, iy);
  const double c = lattice(seed, ix, iy + 1), d = lattice(seed, ix + 1, iy + 1);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

inline double fractal_noise(std::uint64_t seed, double x, double y, int octaves) {
  double sum = 0, amp = 1, norm = 0, freq = 1;
  for (int o = 0; o < octaves; ++o) {
    sum += amp * value_noise(seed + static_cast<std::uint64_t>(o), x * freq, y * freq);
    norm += amp;
    amp *= 0.5;
    freq *= 2;
  }
  return sum / norm;
}

// Procedural appearance of one tissue class. Class identity lives in the
// structure (fibres, nuclei, membranes); colour differences between classes
// are kept below the per-slide stain variation.
struct TextureSpec {
  std::array<double, 3> base{0.95, 0.95, 0.95};
  double fibre_amp = 0, fibre_period = 8, fibre_angle = 0;
  double nuclei_density = 0;  // nuclei per 100 px^2 at patch scale 64
  double nuclei_radius = 2;
  std::array<double, 3> nuclei_color{0.35, 0.2, 0.5};
  double cell_size = 0;  // membrane (fat cell) pattern when > 0
  double grain = 0.02;
};

inline TextureSpec texture_for_class(int k, std::uint64_t texture_seed) {
  TextureSpec t;
  switch (k) {
    case 0:  // background
      t.base = {0.94, 0.93, 0.95};
      t.grain = 0.015;
      return t;
    case 1:  // long oriented collagen fibres, sparse nuclei
      t.base = {0.86, 0.58, 0.72};
      t.fibre_amp = 0.22, t.fibre_period = 7, t.fibre_angle = 0.5;
      t.nuclei_density = 0.08, t.nuclei_radius = 1.5;
      return t;
    case 2:  // densely packed small nuclei
      t.base = {0.80, 0.55, 0.72};
      t.nuclei_density = 1.6, t.nuclei_radius = 1.6;
      return t;
    case 3:  // speckled debris: very dense tiny dark dots plus strong grain
      t.base = {0.80, 0.52, 0.68};
      t.nuclei_density = 3.5, t.nuclei_radius = 0.8;
      t.grain = 0.09;
      return t;
    case 4:  // large pale cells bounded by thin membranes
      t.base = {0.90, 0.66, 0.78};
      t.cell_size = 11;
      return t;
    case 5:  // large crowded nuclei with faint fibres
      t.base = {0.78, 0.52, 0.70};
      t.nuclei_density = 0.55, t.nuclei_radius = 3.2;
      t.fibre_amp = 0.06, t.fibre_period = 5, t.fibre_angle = -1.0;
      return t;
    default: {
      Rng r(derive_seed(texture_seed, {static_cast<std::uint64_t>(k)}));
      t.base = {r.uniform(0.7, 0.9), r.uniform(0.45, 0.65), r.uniform(0.65, 0.8)};
      t.fibre_amp = r.bernoulli(0.5) ? r.uniform(0.05, 0.25) : 0.0;
      t.fibre_period = r.uniform(4, 12);
      t.fibre_angle = r.uniform(-1.5, 1.5);
      t.nuclei_density = r.uniform(0.0, 2.5);
      t.nuclei_radius = r.uniform(0.8, 3.5);
      t.cell_size = r.bernoulli(0.25) ? r.uniform(8, 16) : 0.0;
      t.grain = r.uniform(0.01, 0.08);
      return t;
    }
  }
}

// Distance to the membrane of a jittered-grid Voronoi cell pattern.
inline double membrane_distance(std::uint64_t seed, double x, double y, double cell) {
  const double gx = x / cell, gy = y / cell;
  const auto cx = static_cast<long long>(std::floor(gx));
  const auto cy = static_cast<long long>(std::floor(gy));
  double d1 = 1e30, d2 = 1e30;
  for (long long j = cy - 1; j <= cy + 1; ++j) {
    for (long long i = cx - 1; i <= cx + 1; ++i) {
      const double px = i + 0.5 + 0.4 * lattice(seed, i, j);
      const double py = j + 0.5 + 0.4 * lattice(seed + 1, i, j);
      const double d = std::hypot(gx - px, gy - py);
      if (d < d1) {
        d2 = d1;
        d1 = d;
      } else if (d < d2) {
        d2 = d;
      }
    }
  }
  return (d2 - d1) * 0.5 * cell;
}

}  // namespace detail

// Renders a synthetic slide: a warped Voronoi partition into tissue classes,
// each filled with its class texture under a slide-specific stain shift and a
// smooth within-slide stain field.
inline SlideImage generate_synthetic_slide(const CorpusConfig& cfg, std::uint64_t seed,
                                           std::string slide_id = "slide") {
  cfg.validate();
  const int size = cfg.slide_size;
  const int k_classes = cfg.num_classes;
  const double scale = cfg.patch_size / 64.0;

  Rng rng(derive_seed(seed, {1}));
  struct Site {
    double x, y;
    int cls;
  };
  std::vector<Site> sites(static_cast<std::size_t>(cfg.regions_per_slide));
  std::vector<int> first_classes(static_cast<std::size_t>(k_classes));
  for (int k = 0; k < k_classes; ++k) first_classes[static_cast<std::size_t>(k)] = k;
  rng.shuffle(first_classes);
  for (std::size_t s = 0; s < sites.size(); ++s) {
    sites[s].x = rng.uniform(0, size);
    sites[s].y = rng.uniform(0, size);
    sites[s].cls = s < first_classes.size()
                       ? first_classes[s]
                       : 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(k_classes - 1)));
  }
  const std::uint64_t warp_seed = derive_seed(seed, {2});
  const double warp_amp = size / 14.0;
  const double warp_len = size / 5.0;

  SlideImage slide;
  slide.slide_id = std::move(slide_id);
  slide.num_classes = k_classes;
  slide.pixels = Image(size, size);
  slide.mask.assign(static_cast<std::size_t>(size) * size, 0);

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double wx = x + warp_amp * detail::fractal_noise(warp_seed, x / warp_len, y / warp_len, 3);
      const double wy = y + warp_amp * detail::fractal_noise(warp_seed + 7, x / warp_len, y / warp_len, 3);
      double best = 1e300;
      int cls = 0;
      for (const auto& s : sites) {
        const double d = (wx - s.x) * (wx - s.x) + (wy - s.y) * (wy - s.y);
        if (d < best) {
          best = d;
          cls = s.cls;
        }
      }
      slide.mask[static_cast<std::size_t>(y) * size + x] = static_cast<std::uint8_t>(cls);
    }
  }

  std::vector<detail::TextureSpec> tex;
  for (int k = 0; k < k_classes; ++k) tex.push_back(detail::texture_for_class(k, cfg.texture_seed));

  std::array<double, 3> stain{};
  for (auto& s : stain) s = 1.0 + rng.uniform(-cfg.stain_jitter, cfg.stain_jitter);
  const double brightness = rng.uniform(-0.5, 0.5) * cfg.stain_jitter;
  const std::uint64_t tex_seed = derive_seed(seed, {3});

  // Base fill: background tone, fibres, membranes, grain.
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const int k = slide.mask[static_cast<std::size_t>(y) * size + x];
      const auto& t = tex[static_cast<std::size_t>(k)];
      std::array<double, 3> c = t.base;
      double shade = 0;
      if (t.fibre_amp > 0) {
        const double u = (x * std::cos(t.fibre_angle) + y * std::sin(t.fibre_angle)) / scale;
        const double v = (-x * std::sin(t.fibre_angle) + y * std::cos(t.fibre_angle)) / scale;
        const double wobble = 2.0 * detail::value_noise(tex_seed + 11 + static_cast<std::uint64_t>(k), u / 30, v / 30);
        shade -= t.fibre_amp * (0.5 + 0.5 * std::sin(6.283185307179586 * (v + wobble * t.fibre_period) / t.fibre_period));
      }
      if (t.cell_size > 0) {
        const double d = detail::membrane_distance(tex_seed + 31 + static_cast<std::uint64_t>(k), x / scale, y / scale,
                                                   t.cell_size);
        if (d < 1.0) shade -= 0.35 * (1.0 - d);
      }
      shade += t.grain * detail::lattice(tex_seed + 97, x, y);
      for (int ch = 0; ch < 3; ++ch) c[static_cast<std::size_t>(ch)] += shade;
      for (int ch = 0; ch < 3; ++ch) slide.pixels.at(x, y, ch) = static_cast<float>(c[static_cast<std::size_t>(ch)]);
    }
  }

  // Nuclei: dark discs rasterized only onto pixels of their own class.
  for (int k = 0; k < k_classes; ++k) {
    const auto& t = tex[static_cast<std::size_t>(k)];
    if (t.nuclei_density <= 0) continue;
    Rng nr(derive_seed(seed, {4, static_cast<std::uint64_t>(k)}));
    const double area = static_cast<double>(size) * size / (scale * scale);
    const auto count = static_cast<long long>(area / 100.0 * t.nuclei_density);
    const double radius = t.nuclei_radius * scale;
    for (long long n = 0; n < count; ++n) {
      const double cx = nr.uniform(0, size), cy = nr.uniform(0, size);
      const double r = radius * nr.uniform(0.75, 1.25);
      const double darkness = nr.uniform(0.6, 0.9);
      if (slide.class_at(static_cast<int>(cx), static_cast<int>(cy)) != k) continue;
      const int x0 = std::max(0, static_cast<int>(cx - r - 1)), x1 = std::min(size - 1, static_cast<int>(cx + r + 1));
      const int y0 = std::max(0, static_cast<int>(cy - r - 1)), y1 = std::min(size - 1, static_cast<int>(cy + r + 1));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          if (slide.class_at(x, y) != k) continue;
          const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
          const double cover = std::clamp(r + 0.5 - d, 0.0, 1.0) * darkness;
          if (cover <= 0) continue;
          for (int ch = 0; ch < 3; ++ch) {
            float& p = slide.pixels.at(x, y, ch);
            p = static_cast<float>(p * (1 - cover) + t.nuclei_color[static_cast<std::size_t>(ch)] * cover);
          }
        }
      }
    }
  }

  const std::uint64_t field_seed = derive_seed(seed, {5});
  const double field_len = cfg.stain_field_scale * cfg.patch_size;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        const double field =
            1.0 + cfg.stain_field * detail::value_noise(field_seed + static_cast<std::uint64_t>(ch), x / field_len,
                                                        y / field_len);
        float& p = slide.pixels.at(x, y, ch);
        p = quantize_u8(static_cast<float>(p * stain[static_cast<std::size_t>(ch)] * field + brightness));
      }
  return slide;
}

// Majority class of a square region; ties go to the lowest class id.
inline int majority_label(const SlideImage& slide, int x, int y, int size) {
  std::vector<long long> counts(static_cast<std::size_t>(std::max(slide.num_classes, 1)), 0);
  for (int r = y; r < y + size; ++r)
    for (int c = x; c < x + size; ++c) {
      const int k = slide.class_at(c, r);
      if (static_cast<std::size_t>(k) >= counts.size()) counts.resize(static_cast<std::size_t>(k) + 1, 0);
      ++counts[static_cast<std::size_t>(k)];
    }
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

// Samples `count` center patches from the interior (so all eight neighbours
// fit) and attaches `nearby` distinct neighbours drawn uniformly from the
// 8-neighbourhood. Group ids start at first_group_id and are contiguous.
inline std::vector<PatchGroup> extract_unlabeled_groups(const SlideImage& slide, int patch_size, int nearby,
                                                        int count, std::uint64_t seed,
                                                        long long first_group_id = 0) {
  using detail::require;
  require<config_error>(count >= 1, "extraction count must be >= 1");
  require<config_error>(nearby >= 0 && nearby <= kMaxNearby, "nearby count must be in [0, 8]");
  require<config_error>(patch_size >= 1, "patch size must be positive");
  const int max_x = slide.width() - 2 * patch_size;
  const int max_y = slide.height() - 2 * patch_size;
  require<data_error>(max_x >= patch_size && max_y >= patch_size,
                      "slide " + slide.slide_id + " has no interior position admitting all 8 neighbours");

  Rng rng(seed);
  std::vector<PatchGroup> groups;
  groups.reserve(static_cast<std::size_t>(count));
  for (int g = 0; g < count; ++g) {
    PatchGroup group;
    const long long gid = first_group_id + g;
    group.center = PatchRecord{slide.slide_id,
                               static_cast<int>(rng.between(patch_size, max_x)),
                               static_cast<int>(rng.between(patch_size, max_y)),
                               patch_size, -1, gid, std::nullopt, Split::unlabeled};
    for (std::size_t k : rng.sample(kNeighborOffsets.size(), static_cast<std::size_t>(nearby))) {
      PatchRecord r = group.center;
      r.neighbor = static_cast<int>(k);
      r.x += kNeighborOffsets[k][0] * patch_size;
      r.y += kNeighborOffsets[k][1] * patch_size;
      group.nearby.push_back(std::move(r));
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

inline int labeled_capacity(const SlideImage& slide, int patch_size) {
  return (slide.width() / patch_size) * (slide.height() / patch_size);
}

// Draws `count` cells without replacement from the disjoint patch grid and
// labels each with its majority mask class.
inline std::vector<PatchRecord> extract_labeled_patches(const SlideImage& slide, int patch_size, int count,
                                                        Split split, std::uint64_t seed,
                                                        long long first_group_id = 0) {
  using detail::require;
  require<config_error>(split != Split::unlabeled, "labeled extraction needs a train or test split");
  require<config_error>(count >= 0, "extraction count must be non-negative");
  const int cols = slide.width() / patch_size;
  const int capacity = labeled_capacity(slide, patch_size);
  require<data_error>(count <= capacity, "requested " + std::to_string(count) + " labeled patches but slide " +
                                             slide.slide_id + " has only " + std::to_string(capacity) +
                                             " disjoint cells");
  Rng rng(seed);
  auto cells = rng.sample(static_cast<std::size_t>(capacity), static_cast<std::size_t>(count));
  std::sort(cells.begin(), cells.end());
  std::vector<PatchRecord> out;
  out.reserve(cells.size());
  long long gid = first_group_id;
  for (std::size_t cell : cells) {
    const int x = static_cast<int>(cell % static_cast<std::size_t>(cols)) * patch_size;
    const int y = static_cast<int>(cell / static_cast<std::size_t>(cols)) * patch_size;
    out.push_back(PatchRecord{slide.slide_id, x, y, patch_size, -1, gid++,
                              majority_label(slide, x, y, patch_size), split});
  }
  return out;
}

inline Image crop_patch(const SlideImage& slide, const PatchRecord& r) {
  return crop(slide.pixels, r.x, r.y, r.size, r.size);
}

}  // namespace npcl
