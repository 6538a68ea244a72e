#include "nsrf/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "nsrf/check.hpp"

namespace nsrf {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError(fmt::format("cannot open '{}'", path));
  return f;
}

[[noreturn]] void io_fail(const std::string& path, const char* what) {
  throw IoError(fmt::format("{}: {}", path, what));
}

uint8_t quantize(double v) {
  const double scaled = std::clamp(v, 0.0, 1.0) * 255.0;
  return static_cast<uint8_t>(std::lround(scaled));
}

}  // namespace

void write_rgb_png(const std::string& path, const std::vector<double>& rgb, int width,
                   int height) {
  NSRF_CHECK(width >= 1 && height >= 1, "write_rgb_png: bad extents {}x{}", width, height);
  NSRF_CHECK(rgb.size() == static_cast<size_t>(width) * height * 3,
             "write_rgb_png: {} values for {}x{}x3", rgb.size(), width, height);
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) io_fail(path, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    io_fail(path, "png_create_info_struct failed");
  }
  std::vector<uint8_t> bytes(rgb.size());
  for (size_t i = 0; i < rgb.size(); ++i) bytes[i] = quantize(rgb[i]);
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y) rows[static_cast<size_t>(y)] = bytes.data() + static_cast<size_t>(y) * width * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    io_fail(path, "libpng write error");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<double> read_rgb_png(const std::string& path, int* width, int* height) {
  FilePtr f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) io_fail(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    io_fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail(path, "libpng read error");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  // Normalize to 8-bit RGB regardless of the stored color type.
  png_set_expand(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  const png_byte color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail(path, "expected an RGB image");
  }
  std::vector<uint8_t> bytes(static_cast<size_t>(w) * h * 3);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = bytes.data() + static_cast<size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::vector<double> out(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) out[i] = bytes[i] / 255.0;
  *width = w;
  *height = h;
  return out;
}

void write_label_png(const std::string& path, const std::vector<uint8_t>& labels, int width,
                     int height, const std::vector<std::array<uint8_t, 3>>& palette) {
  NSRF_CHECK(width >= 1 && height >= 1, "write_label_png: bad extents {}x{}", width, height);
  NSRF_CHECK(labels.size() == static_cast<size_t>(width) * height,
             "write_label_png: {} labels for {}x{}", labels.size(), width, height);
  NSRF_CHECK(!palette.empty() && palette.size() <= 256, "write_label_png: palette size {}",
             palette.size());
  for (uint8_t id : labels)
    NSRF_CHECK(id < palette.size(), "write_label_png: label {} outside palette of {}", id,
               palette.size());
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) io_fail(path, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    io_fail(path, "png_create_info_struct failed");
  }
  std::vector<png_color> colors(palette.size());
  for (size_t i = 0; i < palette.size(); ++i)
    colors[i] = {palette[i][0], palette[i][1], palette[i][2]};
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[static_cast<size_t>(y)] =
        const_cast<uint8_t*>(labels.data()) + static_cast<size_t>(y) * width;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    io_fail(path, "libpng write error");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_PLTE(png, info, colors.data(), static_cast<int>(colors.size()));
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<uint8_t> read_label_png(const std::string& path, int* width, int* height) {
  FilePtr f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) io_fail(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    io_fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail(path, "libpng read error");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail(path, "expected an indexed or grayscale label image");
  }
  if (png_get_bit_depth(png, info) < 8) png_set_packing(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  std::vector<uint8_t> labels(static_cast<size_t>(w) * h);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = labels.data() + static_cast<size_t>(y) * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  *width = w;
  *height = h;
  return labels;
}

void write_pfm(const std::string& path, const std::vector<double>& values, int width,
               int height) {
  static_assert(std::endian::native == std::endian::little,
                "PFM writer assumes a little-endian host");
  NSRF_CHECK(width >= 1 && height >= 1, "write_pfm: bad extents {}x{}", width, height);
  NSRF_CHECK(values.size() == static_cast<size_t>(width) * height,
             "write_pfm: {} values for {}x{}", values.size(), width, height);
  FilePtr f = open_file(path, "wb");
  const std::string header = fmt::format("Pf\n{} {}\n-1.0\n", width, height);
  if (std::fwrite(header.data(), 1, header.size(), f.get()) != header.size())
    io_fail(path, "short header write");
  std::vector<float> row(static_cast<size_t>(width));
  // PFM stores the bottom row first.
  for (int y = height - 1; y >= 0; --y) {
    for (int x = 0; x < width; ++x)
      row[static_cast<size_t>(x)] = static_cast<float>(values[static_cast<size_t>(y) * width + x]);
    if (std::fwrite(row.data(), sizeof(float), row.size(), f.get()) != row.size())
      io_fail(path, "short pixel write");
  }
}

std::vector<double> read_pfm(const std::string& path, int* width, int* height) {
  static_assert(std::endian::native == std::endian::little,
                "PFM reader assumes a little-endian host");
  FilePtr f = open_file(path, "rb");
  int w = 0, h = 0;
  double scale = 0.0;
  if (std::fscanf(f.get(), "Pf %d %d %lf", &w, &h, &scale) != 3)
    io_fail(path, "malformed PFM header");
  if (std::fgetc(f.get()) != '\n') io_fail(path, "malformed PFM header terminator");
  if (w < 1 || h < 1) io_fail(path, "bad PFM extents");
  if (scale >= 0.0) io_fail(path, "big-endian PFM is not supported");
  std::vector<double> out(static_cast<size_t>(w) * h);
  std::vector<float> row(static_cast<size_t>(w));
  for (int y = h - 1; y >= 0; --y) {
    if (std::fread(row.data(), sizeof(float), row.size(), f.get()) != row.size())
      io_fail(path, "short pixel read");
    for (int x = 0; x < w; ++x) out[static_cast<size_t>(y) * w + x] = row[static_cast<size_t>(x)];
  }
  const double mag = -scale;
  if (mag != 1.0)
    for (double& v : out) v *= mag;
  *width = w;
  *height = h;
  return out;
}

}  // namespace nsrf
