#include "ccrl/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "ccrl/errors.hpp"

namespace ccrl {

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.brightness = c.contrast = c.saturation = c.hue = 0.0;
  c.p_jitter = c.p_grayscale = c.p_blur = c.p_hflip = c.p_vflip = c.p_rotate = c.p_crop = 0.0;
  c.rotation_min = c.rotation_max = 0.0;
  c.crop_scale_min = c.crop_scale_max = 1.0;
  c.crop_ratio_min = c.crop_ratio_max = 1.0;
  return c;
}

void AugmentConfig::validate() const {
  if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0 || hue > 0.5)
    throw ConfigError("jitter strengths must be >= 0 (hue <= 0.5)");
  if (!(blur_sigma_min > 0 && blur_sigma_min <= blur_sigma_max)) throw ConfigError("blur sigma range must be positive and ordered");
  if (!(crop_scale_min > 0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1))
    throw ConfigError("crop scale range must lie in (0, 1]");
  if (!(crop_ratio_min > 0 && crop_ratio_min <= crop_ratio_max)) throw ConfigError("crop ratio range must be positive and ordered");
  if (rotation_min > rotation_max) throw ConfigError("rotation range must be ordered");
  for (double p : {p_jitter, p_grayscale, p_blur, p_hflip, p_vflip, p_rotate, p_crop})
    if (p < 0 || p > 1) throw ConfigError("probabilities must lie in [0, 1]");
  if (output_size < 1) throw ConfigError("output size must be positive");
}

namespace {

inline float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

inline float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  v = mx;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = 2.0f + (b - r) / d;
  else
    h = 4.0f + (r - g) / d;
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float hh = (h - std::floor(h)) * 6.0f;
  const int sector = std::min(5, static_cast<int>(hh));
  const float f = hh - static_cast<float>(sector);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

template <class F>
Image per_pixel(const Image& img, F f) {
  Image out = img;
  const std::size_t n = img.plane();
  float* r = out.data.data();
  float* g = r + n;
  float* b = g + n;
  for (std::size_t i = 0; i < n; ++i) f(r[i], g[i], b[i]);
  return out;
}

}  // namespace

Image adjust_brightness(const Image& img, float factor) {
  return per_pixel(img, [factor](float& r, float& g, float& b) {
    r = clamp01(r * factor);
    g = clamp01(g * factor);
    b = clamp01(b * factor);
  });
}

Image adjust_contrast(const Image& img, float factor) {
  const std::size_t n = img.plane();
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) sum += luma(img.data[i], img.data[n + i], img.data[2 * n + i]);
  const float mean = static_cast<float>(sum / static_cast<double>(n));
  return per_pixel(img, [factor, mean](float& r, float& g, float& b) {
    r = clamp01(factor * r + (1 - factor) * mean);
    g = clamp01(factor * g + (1 - factor) * mean);
    b = clamp01(factor * b + (1 - factor) * mean);
  });
}

Image adjust_saturation(const Image& img, float factor) {
  return per_pixel(img, [factor](float& r, float& g, float& b) {
    const float y = luma(r, g, b);
    r = clamp01(factor * r + (1 - factor) * y);
    g = clamp01(factor * g + (1 - factor) * y);
    b = clamp01(factor * b + (1 - factor) * y);
  });
}

Image adjust_hue(const Image& img, float shift) {
  return per_pixel(img, [shift](float& r, float& g, float& b) {
    float h, s, v;
    rgb_to_hsv(r, g, b, h, s, v);
    hsv_to_rgb(h + shift, s, v, r, g, b);
    r = clamp01(r);
    g = clamp01(g);
    b = clamp01(b);
  });
}

Image color_jitter(const Image& img, const AugmentConfig& cfg, Rng& rng) {
  auto factor = [&rng](double s) { return static_cast<float>(rng.uniform(std::max(0.0, 1.0 - s), 1.0 + s)); };
  const float fb = factor(cfg.brightness), fc = factor(cfg.contrast), fs = factor(cfg.saturation);
  const auto fh = static_cast<float>(rng.uniform(-cfg.hue, cfg.hue));
  std::array<int, 4> order{0, 1, 2, 3};
  rng.shuffle(std::span<int>(order));
  Image out = img;
  for (int op : order) {
    if (op == 0 && cfg.brightness > 0) out = adjust_brightness(out, fb);
    if (op == 1 && cfg.contrast > 0) out = adjust_contrast(out, fc);
    if (op == 2 && cfg.saturation > 0) out = adjust_saturation(out, fs);
    if (op == 3 && cfg.hue > 0) out = adjust_hue(out, fh);
  }
  return out;
}

Image to_grayscale(const Image& img) {
  return per_pixel(img, [](float& r, float& g, float& b) {
    if (r == g && g == b) return;
    r = g = b = luma(r, g, b);
  });
}

std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (auto& w : k) w /= total;
  return k;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (!(sigma > 0)) throw ConfigError("blur sigma must be positive");
  const auto k = gaussian_kernel(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(k.size() / 2);
  const auto W = static_cast<std::ptrdiff_t>(img.width), H = static_cast<std::ptrdiff_t>(img.height);
  Image tmp(img.width, img.height, img.channels), out(img.width, img.height, img.channels);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::ptrdiff_t y = 0; y < H; ++y)
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        double acc = 0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] *
                 img.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(reflect_index(x + i, W)));
        tmp.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = static_cast<float>(acc);
      }
    for (std::ptrdiff_t y = 0; y < H; ++y)
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        double acc = 0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] *
                 tmp.at(c, static_cast<std::size_t>(reflect_index(y + i, H)), static_cast<std::size_t>(x));
        out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = clamp01(static_cast<float>(acc));
      }
  }
  return out;
}

Image hflip(const Image& img) {
  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

Image vflip(const Image& img) {
  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, img.height - 1 - y, x);
  return out;
}

Image rotate(const Image& img, double degrees) {
  if (degrees == 0.0) return img;
  const double rad = degrees * std::numbers::pi / 180.0;
  double cs = std::cos(rad), sn = std::sin(rad);
  // Snap so right angles land on the integer grid.
  if (std::abs(cs) < 1e-12) cs = 0.0;
  if (std::abs(sn) < 1e-12) sn = 0.0;
  if (std::abs(std::abs(cs) - 1.0) < 1e-12) cs = std::copysign(1.0, cs);
  if (std::abs(std::abs(sn) - 1.0) < 1e-12) sn = std::copysign(1.0, sn);
  const double cx = (static_cast<double>(img.width) - 1) / 2, cy = (static_cast<double>(img.height) - 1) / 2;
  const auto W = static_cast<std::ptrdiff_t>(img.width), H = static_cast<std::ptrdiff_t>(img.height);
  Image out(img.width, img.height, img.channels);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double u = cx + cs * dx - sn * dy;
      const double v = cy + sn * dx + cs * dy;
      const double fu = std::floor(u), fv = std::floor(v);
      const double ax = u - fu, ay = v - fv;
      const auto x0 = static_cast<std::ptrdiff_t>(fu), y0 = static_cast<std::ptrdiff_t>(fv);
      const auto xa = static_cast<std::size_t>(reflect_index(x0, W)), xb = static_cast<std::size_t>(reflect_index(x0 + 1, W));
      const auto ya = static_cast<std::size_t>(reflect_index(y0, H)), yb = static_cast<std::size_t>(reflect_index(y0 + 1, H));
      for (std::size_t c = 0; c < img.channels; ++c) {
        double val;
        if (ax == 0.0 && ay == 0.0) {
          val = img.at(c, ya, xa);
        } else {
          const double top = (1 - ax) * img.at(c, ya, xa) + ax * img.at(c, ya, xb);
          const double bot = (1 - ax) * img.at(c, yb, xa) + ax * img.at(c, yb, xb);
          val = (1 - ay) * top + ay * bot;
        }
        out.at(c, y, x) = clamp01(static_cast<float>(val));
      }
    }
  return out;
}

Image flips_and_rotate(const Image& img, const AugmentConfig& cfg, Rng& rng, std::vector<std::string>* trace) {
  Image out = img;
  auto note = [trace](const char* op) {
    if (trace) trace->emplace_back(op);
  };
  if (rng.bernoulli(cfg.p_hflip)) {
    out = hflip(out);
    note("hflip");
  }
  if (rng.bernoulli(cfg.p_vflip)) {
    out = vflip(out);
    note("vflip");
  }
  if (rng.bernoulli(cfg.p_rotate)) {
    out = rotate(out, rng.uniform(cfg.rotation_min, cfg.rotation_max));
    note("rotate");
  }
  return out;
}

Window sample_crop_window(std::size_t width, std::size_t height, const AugmentConfig& cfg, Rng& rng) {
  const double W = static_cast<double>(width), H = static_cast<double>(height), area = W * H;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max) * area;
    // w = sqrt(target·r) <= W and h = sqrt(target/r) <= H bound the ratio.
    const double lo = std::max(cfg.crop_ratio_min, target / (H * H));
    const double hi = std::min(cfg.crop_ratio_max, (W * W) / target);
    if (lo > hi) continue;
    const double ratio = lo == hi ? lo : std::exp(rng.uniform(std::log(lo), std::log(hi)));
    const double w = std::min(W, std::sqrt(target * ratio)), h = std::min(H, std::sqrt(target / ratio));
    const double x0 = rng.uniform(0.0, W - w), y0 = rng.uniform(0.0, H - h);
    return {x0, y0, x0 + w, y0 + h};
  }
  double w = W, h = H;
  if (w / h < cfg.crop_ratio_min)
    h = w / cfg.crop_ratio_min;
  else if (w / h > cfg.crop_ratio_max)
    w = h * cfg.crop_ratio_max;
  return {(W - w) / 2, (H - h) / 2, (W + w) / 2, (H + h) / 2};
}

Image random_resized_crop(const Image& img, const AugmentConfig& cfg, Rng& rng, Window* used) {
  const Window win = sample_crop_window(img.width, img.height, cfg, rng);
  if (used) *used = win;
  return resize_window(img, win, cfg.output_size, cfg.output_size);
}

AugmentedView augment_view(const Image& img, const AugmentConfig& cfg, bool local, Rng& rng) {
  AugmentedView view;
  if (local && rng.bernoulli(cfg.p_crop)) {
    view.image = random_resized_crop(img, cfg, rng);
    view.ops.emplace_back("crop");
  } else {
    view.image = resize(img, cfg.output_size, cfg.output_size);
    if (img.width != cfg.output_size || img.height != cfg.output_size) view.ops.emplace_back("resize");
  }
  if (rng.bernoulli(cfg.p_jitter)) {
    view.image = color_jitter(view.image, cfg, rng);
    view.ops.emplace_back("jitter");
  }
  if (rng.bernoulli(cfg.p_grayscale)) {
    view.image = to_grayscale(view.image);
    view.ops.emplace_back("grayscale");
  }
  if (rng.bernoulli(cfg.p_blur)) {
    view.image = gaussian_blur(view.image, rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max));
    view.ops.emplace_back("blur");
  }
  view.image = flips_and_rotate(view.image, cfg, rng, &view.ops);
  return view;
}

ViewPair make_view_pair(const Image& img, const AugmentConfig& cfg, std::uint64_t seed, bool local_global) {
  if (img.channels != 3) throw ShapeError("augmentation expects RGB images");
  Rng query_rng(derive_seed(seed, "query-view"));
  Rng key_rng(derive_seed(seed, "key-view"));
  ViewPair pair;
  pair.seed = seed;
  pair.query = augment_view(img, cfg, true, query_rng);
  pair.key = augment_view(img, cfg, !local_global, key_rng);
  return pair;
}

}  // namespace ccrl
