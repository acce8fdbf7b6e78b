#pragma once

// Lossless PNG reading and writing through libpng. Link against PNG::PNG.

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "npcl/error.hpp"
#include "npcl/image.hpp"

namespace npcl {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void write_png_rows(const std::string& path, int width, int height, int color_type,
                           const std::vector<std::uint8_t>& bytes, int channels) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  require<data_error>(f != nullptr, "cannot open image for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw data_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw data_error("failed writing PNG: " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Fixed metadata keeps files byte-identical across runs.
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(&bytes[static_cast<std::size_t>(y) * width * channels]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

inline void write_png(const std::string& path, const Image& img) {
  std::vector<std::uint8_t> bytes(img.rgb.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.rgb[i], 0.0f, 1.0f) * 255.0f));
  detail::write_png_rows(path, img.width, img.height, PNG_COLOR_TYPE_RGB, bytes, 3);
}

// Single-channel 8-bit image (class masks).
inline void write_png_gray(const std::string& path, int width, int height, const std::vector<std::uint8_t>& values) {
  detail::require<data_error>(values.size() == static_cast<std::size_t>(width) * height, "gray PNG size mismatch");
  detail::write_png_rows(path, width, height, PNG_COLOR_TYPE_GRAY, values, 1);
}

struct RawPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> bytes;
};

inline RawPng read_png_raw(const std::string& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  detail::require<data_error>(f != nullptr, "cannot open image: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw data_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw data_error("failed reading PNG: " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  RawPng out;
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * static_cast<std::size_t>(out.height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = &out.bytes[stride * static_cast<std::size_t>(y)];
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

inline Image read_png(const std::string& path) {
  const RawPng raw = read_png_raw(path);
  detail::require<data_error>(raw.channels == 1 || raw.channels == 3, "unsupported PNG channel count: " + path);
  Image img(raw.width, raw.height);
  const std::size_t pixels = static_cast<std::size_t>(raw.width) * raw.height;
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const std::uint8_t v = raw.bytes[p * static_cast<std::size_t>(raw.channels) + (raw.channels == 3 ? c : 0)];
      img.rgb[p * 3 + c] = static_cast<float>(v) / 255.0f;
    }
  return img;
}

inline std::vector<std::uint8_t> read_png_gray(const std::string& path, int& width, int& height) {
  RawPng raw = read_png_raw(path);
  detail::require<data_error>(raw.channels == 1, "expected a single-channel PNG: " + path);
  width = raw.width;
  height = raw.height;
  return std::move(raw.bytes);
}

}  // namespace npcl
