#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ccrl/image.hpp"
#include "ccrl/rng.hpp"

namespace ccrl {

struct AugmentConfig {
  // Color jitter strengths: factors drawn from [1-s, 1+s], hue shift from [-h, h].
  double brightness = 0.4, contrast = 0.4, saturation = 0.4, hue = 0.1;
  double p_jitter = 0.8;
  double p_grayscale = 0.2;
  double blur_sigma_min = 0.1, blur_sigma_max = 2.0;
  double p_blur = 0.5;
  double p_hflip = 0.5, p_vflip = 0.5;
  double rotation_min = 0.0, rotation_max = 180.0;  // degrees
  double p_rotate = 1.0;
  double crop_scale_min = 0.2, crop_scale_max = 1.0;
  double crop_ratio_min = 3.0 / 4.0, crop_ratio_max = 4.0 / 3.0;
  double p_crop = 1.0;
  std::size_t output_size = 32;

  /// Every stochastic op disabled.
  static AugmentConfig identity();
  void validate() const;
};

Image adjust_brightness(const Image& img, float factor);
Image adjust_contrast(const Image& img, float factor);
Image adjust_saturation(const Image& img, float factor);
/// Shift in fractions of the hue circle.
Image adjust_hue(const Image& img, float shift);
/// Random factors and random order; zero strengths skip their op.
Image color_jitter(const Image& img, const AugmentConfig& cfg, Rng& rng);

/// Luminance 0.299R + 0.587G + 0.114B replicated into all channels.
Image to_grayscale(const Image& img);

/// Separable Gaussian, radius ceil(3σ), symmetric reflection at borders.
Image gaussian_blur(const Image& img, double sigma);
std::vector<double> gaussian_kernel(double sigma);

Image hflip(const Image& img);
Image vflip(const Image& img);
/// Counter-clockwise (as displayed) rotation about the image center,
/// bilinear, reflected borders. Multiples of 90° are exact.
Image rotate(const Image& img, double degrees);
Image flips_and_rotate(const Image& img, const AugmentConfig& cfg, Rng& rng, std::vector<std::string>* trace = nullptr);

/// Window with area fraction uniform in the scale range and log-uniform
/// aspect ratio restricted to what fits. Falls back to a centered window
/// after 10 infeasible draws.
Window sample_crop_window(std::size_t width, std::size_t height, const AugmentConfig& cfg, Rng& rng);
Image random_resized_crop(const Image& img, const AugmentConfig& cfg, Rng& rng, Window* used = nullptr);

struct AugmentedView {
  Image image;
  std::vector<std::string> ops;  // applied ops, in order
};

/// crop (local only) → jitter → grayscale → blur → flips → rotation.
/// The global pipeline resizes the whole image instead of cropping.
AugmentedView augment_view(const Image& img, const AugmentConfig& cfg, bool local, Rng& rng);

struct ViewPair {
  AugmentedView query;  // local pipeline
  AugmentedView key;    // global pipeline
  std::uint64_t seed = 0;
};

/// Pure function of (image, seed, cfg). With local_global disabled both
/// views come from the cropping pipeline.
ViewPair make_view_pair(const Image& img, const AugmentConfig& cfg, std::uint64_t seed, bool local_global = true);

}  // namespace ccrl
