// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "understory/error.hpp"
#include "understory/image.hpp"
#include "understory/io/files.hpp"

namespace understory::io {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

inline void write_png_rows(const fs::path& path, int width, int height, int color_type,
                           const std::vector<unsigned char>& pixels) {
  ensure_parent(path);
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (color_type == PNG_COLOR_TYPE_RGB) png_set_sRGB(png, info, PNG_sRGB_INTENT_PERCEPTUAL);
  png_write_info(png, info);
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * width * channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Decodes any PNG into 8-bit RGB or gray.
inline std::vector<unsigned char> read_png_raw(const fs::path& path, bool gray, int& width, int& height) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  std::vector<unsigned char> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("cannot decode PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const auto bit_depth = png_get_bit_depth(png, info);
  const auto ct = png_get_color_type(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (ct == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (ct == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (ct & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (gray && (ct & PNG_COLOR_MASK_COLOR)) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (!gray && !(ct & PNG_COLOR_MASK_COLOR)) png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  pixels.resize(rowbytes * static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) png_read_row(png, pixels.data() + rowbytes * static_cast<std::size_t>(y), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return pixels;
}

}  // namespace detail

inline unsigned char encode_srgb8(double linear) {
  return static_cast<unsigned char>(std::lround(srgb_encode(linear) * 255.0));
}

/// Linear image -> 8-bit sRGB PNG.
inline void write_png(const fs::path& path, const Image& img) {
  std::vector<unsigned char> px(img.data.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = encode_srgb8(img.data[i]);
  detail::write_png_rows(path, img.width, img.height, PNG_COLOR_TYPE_RGB, px);
}

/// 8-bit sRGB PNG -> linear image.
inline Image read_png(const fs::path& path) {
  int w = 0, h = 0;
  const auto px = detail::read_png_raw(path, false, w, h);
  Image img(w, h);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = srgb_decode(px[i] / 255.0);
  return img;
}

/// Binary mask PNG: values >= 0.5 become 255, the rest 0.
inline void write_mask_png(const fs::path& path, const Plane& mask) {
  std::vector<unsigned char> px(mask.data.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask.data[i] >= 0.5 ? 255 : 0;
  detail::write_png_rows(path, mask.width, mask.height, PNG_COLOR_TYPE_GRAY, px);
}

inline Plane read_mask_png(const fs::path& path) {
  int w = 0, h = 0;
  const auto px = detail::read_png_raw(path, true, w, h);
  Plane mask(w, h);
  for (std::size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = px[i] >= 128 ? 1.0 : 0.0;
  return mask;
}

}  // namespace understory::io
