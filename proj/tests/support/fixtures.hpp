#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "ccrl/image.hpp"
#include "ccrl/rng.hpp"

namespace ccrl::testing {

inline std::filesystem::path fixture_dir() { return CCRL_FIXTURE_DIR; }

inline bool update_golden() {
  const char* v = std::getenv("CCRL_UPDATE_GOLDEN");
  return v && std::string(v) == "1";
}

/// Smooth blob on a textured background, deterministic in `seed`.
inline Image test_cell(std::size_t w, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h);
  const double cx = rng.uniform(0.4, 0.6) * static_cast<double>(w), cy = rng.uniform(0.4, 0.6) * static_cast<double>(h);
  const double r = 0.3 * static_cast<double>(std::min(w, h));
  const double tint[3] = {rng.uniform(0.5, 0.9), rng.uniform(0.1, 0.5), rng.uniform(0.3, 0.8)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double d = std::hypot(static_cast<double>(x) - cx, (static_cast<double>(y) - cy) * 1.3) / r;
      const double inside = 1.0 / (1.0 + std::exp(8.0 * (d - 1.0)));
      for (std::size_t c = 0; c < 3; ++c) {
        const double bg = 0.85 + 0.05 * std::sin(0.7 * static_cast<double>(x + 2 * c) + 0.3 * static_cast<double>(y));
        img.at(c, y, x) = static_cast<float>(std::clamp(inside * tint[c] + (1 - inside) * bg + 0.02 * rng.normal(), 0.0, 1.0));
      }
    }
  return img;
}

/// 8-bit quantization as written to PNG.
inline Image quantize(const Image& img) {
  Image out = img;
  for (auto& v : out.data) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return out;
}

}  // namespace ccrl::testing
