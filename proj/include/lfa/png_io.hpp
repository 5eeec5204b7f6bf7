#pragma once

#include <png.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "lfa/error.hpp"
#include "lfa/grid.hpp"

namespace lfa::png {

using Rgb = std::array<std::uint8_t, 3>;
using RgbImage = Grid<Rgb>;

struct GrayImage {
  Image pixels;       // normalized to [0,1]
  int bit_depth = 8;  // 8 or 16 as stored on disk
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  return f;
}

[[noreturn]] inline void on_png_error(png_structp, png_const_charp msg) { throw Error(msg); }
inline void on_png_warning(png_structp, png_const_charp) {}

}  // namespace detail

/// Reads a PNG as single-channel [0,1] floats. Color inputs are reduced to
/// luminance by libpng; alpha is stripped.
inline GrayImage read_gray(const std::filesystem::path& path) {
  auto file = detail::open(path, "rb");
  if (!file) throw IngestionError("cannot open image '" + path.string() + "'");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::on_png_error,
                                           detail::on_png_warning);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  try {
    png_init_io(png, file.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
        color == PNG_COLOR_TYPE_PALETTE) {
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
    if (depth == 16) png_set_swap(png);  // host little-endian rows
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int out_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<std::uint8_t> buffer(rowbytes * height);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
    png_read_image(png, rows.data());

    GrayImage out{Image(width, height), out_depth == 16 ? 16 : 8};
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        if (out_depth == 16) {
          std::uint16_t v;
          std::memcpy(&v, rows[y] + 2 * x, 2);
          out.pixels(x, y) = static_cast<float>(v / 65535.0);
        } else {
          out.pixels(x, y) = static_cast<float>(rows[y][x] / 255.0);
        }
      }
    }
    return out;
  } catch (const IngestionError&) {
    throw;
  } catch (const Error& e) {
    throw IngestionError("cannot decode image '" + path.string() + "': " + e.what());
  }
}

/// Quantizes a [0,1] image to 8 or 16 bits. Values outside [0,1] are clipped.
inline void write_gray(const std::filesystem::path& path, const Image& img, int bit_depth = 16) {
  if (bit_depth != 8 && bit_depth != 16) throw ValidationError("PNG bit depth must be 8 or 16");
  auto file = detail::open(path, "wb");
  if (!file) throw RuntimeFailure("cannot write '" + path.string() + "'");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::on_png_error,
                                            detail::on_png_warning);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  const int bytes = bit_depth / 8;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width()) * bytes);
  try {
    png_init_io(png, file.get());
    png_set_IHDR(png, info, img.width(), img.height(), bit_depth, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        const double v = clamp01(img(x, y));
        if (bit_depth == 16) {
          const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
          row[2 * x] = static_cast<std::uint8_t>(q >> 8);  // PNG is big-endian
          row[2 * x + 1] = static_cast<std::uint8_t>(q & 0xff);
        } else {
          row[x] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (const Error& e) {
    throw RuntimeFailure("cannot encode '" + path.string() + "': " + e.what());
  }
}

inline void write_mask(const std::filesystem::path& path, const Mask& mask) {
  Image img(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) img(x, y) = mask(x, y) ? 1.0f : 0.0f;
  write_gray(path, img, 8);
}

/// Any non-zero pixel is foreground.
inline Mask read_mask(const std::filesystem::path& path) {
  const GrayImage g = read_gray(path);
  Mask m(g.pixels.width(), g.pixels.height());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) m(x, y) = g.pixels(x, y) > 0.0f ? 1 : 0;
  return m;
}

inline void write_rgb(const std::filesystem::path& path, const RgbImage& img) {
  auto file = detail::open(path, "wb");
  if (!file) throw RuntimeFailure("cannot write '" + path.string() + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::on_png_error,
                                            detail::on_png_warning);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  try {
    png_init_io(png, file.get());
    png_set_IHDR(png, info, img.width(), img.height(), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width()) * 3);
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) std::memcpy(&row[3 * x], img(x, y).data(), 3);
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (const Error& e) {
    throw RuntimeFailure("cannot encode '" + path.string() + "': " + e.what());
  }
}

inline RgbImage read_rgb(const std::filesystem::path& path) {
  auto file = detail::open(path, "rb");
  if (!file) throw IngestionError("cannot open image '" + path.string() + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::on_png_error,
                                           detail::on_png_warning);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};
  try {
    png_init_io(png, file.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<std::uint8_t> buffer(rowbytes * height);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
    png_read_image(png, rows.data());
    RgbImage out(width, height);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) std::memcpy(out(x, y).data(), rows[y] + 3 * x, 3);
    return out;
  } catch (const Error& e) {
    throw IngestionError("cannot decode image '" + path.string() + "': " + e.what());
  }
}

}  // namespace lfa::png
