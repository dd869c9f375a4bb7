#include "ccrl/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "ccrl/errors.hpp"

namespace ccrl {

Image resize_window(const Image& img, const Window& window, std::size_t out_w, std::size_t out_h) {
  Image out(out_w, out_h, img.channels);
  const double sx = window.width() / static_cast<double>(out_w);
  const double sy = window.height() / static_cast<double>(out_h);
  const double max_x = static_cast<double>(img.width - 1), max_y = static_cast<double>(img.height - 1);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double v = std::clamp(window.y0 + (static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(v);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double fy = v - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double u = std::clamp(window.x0 + (static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(u);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double fx = u - static_cast<double>(x0);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top = (1 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1);
        const double bot = (1 - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1);
        out.at(c, y, x) = static_cast<float>((1 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

Image resize(const Image& img, std::size_t out_w, std::size_t out_h) {
  if (img.width == out_w && img.height == out_h) return img;
  return resize_window(img, {0, 0, static_cast<double>(img.width), static_cast<double>(img.height)}, out_w, out_h);
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::string& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path);
  return f;
}

// Decoded rows, normalized to 8-bit-per-sample palette-free data or 16-bit.
struct RawPng {
  png_uint_32 width = 0, height = 0;
  int channels = 0, bit_depth = 0;
  std::vector<png_byte> bytes;
  std::size_t row_bytes = 0;
};

RawPng decode(const std::string& path, bool keep_16bit) {
  auto file = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw FormatError(path + " is not a PNG");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) throw IoError("libpng initialization failed");
  RawPng raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("failed decoding " + path);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16) {
    if (keep_16bit)
      png_set_swap(png);  // host-order 16-bit samples
    else
      png_set_strip_16(png);
  }
  png_read_update_info(png, info);
  raw.width = png_get_image_width(png, info);
  raw.height = png_get_image_height(png, info);
  raw.channels = png_get_channels(png, info);
  raw.bit_depth = png_get_bit_depth(png, info);
  raw.row_bytes = png_get_rowbytes(png, info);
  raw.bytes.resize(raw.row_bytes * raw.height);
  std::vector<png_bytep> rows(raw.height);
  for (png_uint_32 y = 0; y < raw.height; ++y) rows[y] = raw.bytes.data() + y * raw.row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

void encode(const std::string& path, png_uint_32 width, png_uint_32 height, int color, int depth,
            std::vector<png_byte>& bytes, std::size_t row_bytes) {
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) throw IoError("libpng initialization failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (depth == 16) png_set_swap(png);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = bytes.data() + y * row_bytes;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_png(const std::string& path) {
  const RawPng raw = decode(path, false);
  Image img(raw.width, raw.height, 3);
  for (std::size_t y = 0; y < raw.height; ++y)
    for (std::size_t x = 0; x < raw.width; ++x) {
      const png_byte* px = raw.bytes.data() + y * raw.row_bytes + x * static_cast<std::size_t>(raw.channels);
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = raw.channels >= 3 ? c : 0;
        img.at(c, y, x) = static_cast<float>(px[src]) / 255.0f;
      }
    }
  return img;
}

LabelImage read_label_png(const std::string& path) {
  const RawPng raw = decode(path, true);
  if (raw.channels != 1) throw FormatError(path + ": instance mask must be single-channel");
  LabelImage out{raw.width, raw.height, std::vector<std::uint32_t>(std::size_t{raw.width} * raw.height)};
  for (std::size_t y = 0; y < raw.height; ++y)
    for (std::size_t x = 0; x < raw.width; ++x) {
      const png_byte* row = raw.bytes.data() + y * raw.row_bytes;
      out.data[y * raw.width + x] =
          raw.bit_depth == 16 ? reinterpret_cast<const std::uint16_t*>(row)[x] : static_cast<std::uint32_t>(row[x]);
    }
  return out;
}

void write_png(const std::string& path, const Image& img) {
  if (img.channels != 3) throw FormatError("write_png expects a 3-channel image");
  const std::size_t row_bytes = img.width * 3;
  std::vector<png_byte> bytes(row_bytes * img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        bytes[y * row_bytes + x * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0f));
      }
  encode(path, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), PNG_COLOR_TYPE_RGB, 8, bytes,
         row_bytes);
}

void write_label_png(const std::string& path, const LabelImage& labels) {
  const std::size_t row_bytes = labels.width * 2;
  std::vector<png_byte> bytes(row_bytes * labels.height);
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    if (labels.data[i] > 0xFFFF) throw FormatError("instance id exceeds 16 bits");
    const auto v = static_cast<std::uint16_t>(labels.data[i]);
    std::copy_n(reinterpret_cast<const png_byte*>(&v), 2, bytes.data() + 2 * i);
  }
  encode(path, static_cast<png_uint_32>(labels.width), static_cast<png_uint_32>(labels.height), PNG_COLOR_TYPE_GRAY,
         16, bytes, row_bytes);
}

}  // namespace ccrl
