#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ccrl {

/// Planar (CHW) float image, values nominally in [0, 1].
struct Image {
  std::size_t width = 0, height = 0, channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c = 3, float fill = 0.0f)
      : width(w), height(h), channels(c), data(w * h * c, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  std::size_t plane() const { return width * height; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Integer-labeled image (instance masks; 0 = background).
struct LabelImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint32_t> data;

  std::uint32_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
};

/// Half-sample symmetric reflection of an index into [0, n): -1 -> 0, n -> n-1.
inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  const std::ptrdiff_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

/// Axis-aligned window in continuous pixel coordinates; pixel i covers [i, i+1).
struct Window {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  friend bool operator==(const Window&, const Window&) = default;
};

/// Bilinear resampling of `window` to out_w×out_h, pixel-center aligned.
/// Samples outside the image clamp to the edge.
Image resize_window(const Image& img, const Window& window, std::size_t out_w, std::size_t out_h);
Image resize(const Image& img, std::size_t out_w, std::size_t out_h);

/// 8/16-bit gray, RGB, RGBA or palette PNG -> 3-channel float image.
Image read_png(const std::string& path);
/// Single-channel 8/16-bit PNG -> integer labels.
LabelImage read_label_png(const std::string& path);
/// Quantizes to 8-bit RGB (round to nearest).
void write_png(const std::string& path, const Image& img);
/// 16-bit grayscale.
void write_label_png(const std::string& path, const LabelImage& labels);

}  // namespace ccrl
