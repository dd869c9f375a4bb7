#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ccrl/augment.hpp"
#include "ccrl/errors.hpp"
#include "fixtures.hpp"

using namespace ccrl;
using ccrl::testing::test_cell;

namespace {

bool in_unit_range(const Image& img) {
  return std::all_of(img.data.begin(), img.data.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

Image checker(std::size_t n) {
  Image img(n, n);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        img.at(c, y, x) = static_cast<float>((x * 7 + y * 13 + c * 5) % 17) / 16.0f;
  return img;
}

}  // namespace

TEST(Augment, ZeroStrengthJitterIsIdentity) {
  auto cfg = AugmentConfig::identity();
  const Image img = test_cell(32, 32, 1);
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    EXPECT_EQ(color_jitter(img, cfg, rng), img);
  }
}

TEST(Augment, SaturationZeroIsGrayscale) {
  const Image img = test_cell(32, 32, 2);
  EXPECT_EQ(adjust_saturation(img, 0.0f), to_grayscale(img));
}

TEST(Augment, GrayscaleCoefficientsAndIdempotence) {
  Image red(1, 1);
  red.at(0, 0, 0) = 1.0f;
  const Image g = to_grayscale(red);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(g.at(c, 0, 0), 0.299f, 1e-6);
  const Image img = test_cell(32, 32, 3);
  const Image once = to_grayscale(img);
  EXPECT_EQ(to_grayscale(once), once);
}

TEST(Augment, HueShiftRoundTrips) {
  const Image img = test_cell(16, 16, 4);
  const Image back = adjust_hue(adjust_hue(img, 0.1f), -0.1f);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 1e-5);
  EXPECT_EQ(adjust_hue(img, 0.0f).data.size(), img.data.size());
}

TEST(Augment, BlurPreservesConstantAndMean) {
  const Image flat(32, 32, 3, 0.37f);
  for (double sigma : {0.1, 0.7, 2.0}) {
    const Image out = gaussian_blur(flat, sigma);
    for (float v : out.data) EXPECT_NEAR(v, 0.37f, 1e-6);
  }
  const Image img = test_cell(32, 32, 5);
  for (double sigma : {0.1, 1.3, 2.0}) {
    const Image out = gaussian_blur(img, sigma);
    for (std::size_t c = 0; c < 3; ++c) {
      double a = 0, b = 0;
      for (std::size_t i = 0; i < img.plane(); ++i) a += img.data[c * img.plane() + i], b += out.data[c * img.plane() + i];
      EXPECT_NEAR(a / img.plane(), b / img.plane(), 1e-4);
    }
  }
}

TEST(Augment, BlurDeltaMatchesDenseConvolution) {
  const double sigma = 2.0;
  Image delta(32, 32, 3, 0.0f);
  for (std::size_t c = 0; c < 3; ++c) delta.at(c, 16, 16) = 1.0f;
  const Image out = gaussian_blur(delta, sigma);
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  double norm = 0;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) norm += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const int dx = x - 16, dy = y - 16;
      const double expect = std::abs(dx) <= radius && std::abs(dy) <= radius
                                ? std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) / norm
                                : 0.0;
      ASSERT_NEAR(out.at(1, y, x), expect, 1e-7) << x << "," << y;
    }
}

TEST(Augment, FlipsAreInvolutions) {
  const Image img = test_cell(32, 32, 6);
  EXPECT_EQ(hflip(hflip(img)), img);
  EXPECT_EQ(vflip(vflip(img)), img);
  EXPECT_NE(hflip(img), img);
}

TEST(Augment, ZeroRotationIsIdentity) {
  const Image img = test_cell(32, 32, 7);
  EXPECT_EQ(rotate(img, 0.0), img);
  auto cfg = AugmentConfig::identity();
  cfg.p_rotate = 1.0;
  Rng rng(3);
  EXPECT_EQ(flips_and_rotate(img, cfg, rng), img);
}

TEST(Augment, RightAngleRotationsAreExact) {
  const std::size_t n = 9;
  const Image img = checker(n);
  const Image r90 = rotate(img, 90.0);
  const Image r180 = rotate(img, 180.0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        ASSERT_EQ(r90.at(c, y, x), img.at(c, x, n - 1 - y));
        ASSERT_EQ(r180.at(c, y, x), img.at(c, n - 1 - y, n - 1 - x));
      }
  EXPECT_EQ(rotate(r90, 270.0), img);
  const Image even = checker(8);
  EXPECT_EQ(rotate(rotate(even, 90.0), -90.0), even);
}

TEST(Augment, IdentityCropOnSquareInput) {
  AugmentConfig cfg = AugmentConfig::identity();
  cfg.p_crop = 1.0;
  const Image img = test_cell(32, 32, 8);
  Rng rng(1);
  Window w;
  EXPECT_EQ(random_resized_crop(img, cfg, rng, &w), img);
  EXPECT_EQ(w, (Window{0, 0, 32, 32}));
}

TEST(Augment, CropAlwaysEmitsOutputSize) {
  AugmentConfig cfg;
  Rng rng(9);
  for (auto [w, h] : {std::pair<std::size_t, std::size_t>{32, 32}, {48, 40}, {100, 33}, {33, 90}}) {
    const Image img = test_cell(w, h, w * h);
    for (int i = 0; i < 50; ++i) {
      Window win;
      const Image out = random_resized_crop(img, cfg, rng, &win);
      ASSERT_EQ(out.width, 32u);
      ASSERT_EQ(out.height, 32u);
      ASSERT_GE(win.x0, 0.0);
      ASSERT_GE(win.y0, 0.0);
      ASSERT_LE(win.x1, static_cast<double>(w) + 1e-9);
      ASSERT_LE(win.y1, static_cast<double>(h) + 1e-9);
    }
  }
}

TEST(Augment, CropFallsBackToCenter) {
  AugmentConfig cfg;
  cfg.crop_scale_min = cfg.crop_scale_max = 1.0;
  Rng rng(1);
  // Full area with ratio at most 4/3 cannot fit a 100×33 image.
  EXPECT_EQ(sample_crop_window(100, 33, cfg, rng), (Window{50 - 22, 0, 50 + 22, 33}));
}

TEST(Augment, CropWindowGoldenCoordinates) {
  AugmentConfig cfg;
  Rng rng(2024);
  const Window w = sample_crop_window(64, 64, cfg, rng);
  Rng again(2024);
  EXPECT_EQ(sample_crop_window(64, 64, cfg, again), w);
  // Recorded from the reference implementation.
  EXPECT_NEAR(w.x0, 1.6278075503296578, 1e-9);
  EXPECT_NEAR(w.y0, 5.0659199928418559, 1e-9);
  EXPECT_NEAR(w.x1, 59.500332308114913, 1e-9);
  EXPECT_NEAR(w.y1, 53.911978286492506, 1e-9);
}

TEST(Augment, CropAreaFractionIsUniform) {
  AugmentConfig cfg;
  Rng rng(77);
  const std::size_t n = 10000;
  std::vector<double> fractions(n);
  for (auto& f : fractions) {
    const Window w = sample_crop_window(64, 64, cfg, rng);
    f = w.width() * w.height() / (64.0 * 64.0);
  }
  std::sort(fractions.begin(), fractions.end());
  const double lo = cfg.crop_scale_min, hi = cfg.crop_scale_max;
  double d = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double cdf = (fractions[i] - lo) / (hi - lo);
    d = std::max({d, std::abs(cdf - static_cast<double>(i) / n), std::abs(cdf - static_cast<double>(i + 1) / n)});
  }
  // Kolmogorov-Smirnov critical value at alpha = 0.001.
  EXPECT_LT(d, 1.95 / std::sqrt(static_cast<double>(n)));
  EXPECT_GE(fractions.front(), lo - 1e-12);
  EXPECT_LE(fractions.back(), hi + 1e-12);
}

TEST(Augment, IdentityPipelineKeyIsResizedOriginal) {
  const auto cfg = AugmentConfig::identity();
  const Image img = test_cell(40, 36, 10);
  const ViewPair pair = make_view_pair(img, cfg, 5, true);
  EXPECT_EQ(pair.key.image, resize(img, 32, 32));
  EXPECT_EQ(pair.key.ops, std::vector<std::string>{"resize"});
}

TEST(Augment, ViewPairsAreDeterministicAndValid) {
  AugmentConfig cfg;
  const Image img = test_cell(44, 44, 11);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const ViewPair a = make_view_pair(img, cfg, seed, true);
    const ViewPair b = make_view_pair(img, cfg, seed, true);
    ASSERT_EQ(a.query.image, b.query.image);
    ASSERT_EQ(a.key.image, b.key.image);
    ASSERT_EQ(a.query.ops, b.query.ops);
    for (const auto* v : {&a.query.image, &a.key.image}) {
      ASSERT_EQ(v->width, 32u);
      ASSERT_EQ(v->height, 32u);
      ASSERT_EQ(v->channels, 3u);
      ASSERT_TRUE(in_unit_range(*v));
    }
    // The key pipeline never crops when local-global is on; the query always does.
    ASSERT_EQ(std::count(a.key.ops.begin(), a.key.ops.end(), "crop"), 0);
    ASSERT_EQ(a.query.ops.front(), "crop");
    const ViewPair sym = make_view_pair(img, cfg, seed, false);
    ASSERT_EQ(sym.key.ops.front(), "crop");
  }
}

TEST(Augment, OpOrderIsFixed) {
  AugmentConfig cfg;
  cfg.p_jitter = cfg.p_grayscale = cfg.p_blur = cfg.p_hflip = cfg.p_vflip = 1.0;
  const Image img = test_cell(32, 32, 12);
  const ViewPair pair = make_view_pair(img, cfg, 3, true);
  const std::vector<std::string> expect{"crop", "jitter", "grayscale", "blur", "hflip", "vflip", "rotate"};
  EXPECT_EQ(pair.query.ops, expect);
  EXPECT_EQ(std::vector<std::string>(pair.key.ops.begin(), pair.key.ops.end()),
            std::vector<std::string>(expect.begin() + 1, expect.end()));
}

TEST(Augment, InvalidConfigRejected) {
  AugmentConfig cfg;
  cfg.brightness = -0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.blur_sigma_min = 3.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.crop_scale_max = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.p_blur = 2.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(AugmentConfig{}.validate());
  EXPECT_NO_THROW(AugmentConfig::identity().validate());
}

TEST(Augment, GoldenViewsAreByteStable) {
  const Image img = test_cell(48, 48, 99);
  AugmentConfig cfg;
  const auto dir = ccrl::testing::fixture_dir() / "golden";
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const ViewPair pair = make_view_pair(img, cfg, seed, true);
    for (const auto& [view, tag] : {std::pair{&pair.query.image, "query"}, std::pair{&pair.key.image, "key"}}) {
      const auto path = dir / ("view_" + std::to_string(seed) + "_" + tag + ".png");
      if (ccrl::testing::update_golden()) write_png(path.string(), *view);
      const Image stored = read_png(path.string());
      EXPECT_EQ(stored, ccrl::testing::quantize(*view)) << path;
    }
  }
}
