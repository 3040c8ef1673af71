#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fundus/image.hpp"
#include "fundus/random.hpp"

namespace fundus {

struct GaussianKernelSpec {
  double sigma_x = 10.0;
  double sigma_y = 10.0;
  int half_size = 20;

  // (2k+1) x (2k+1) weights exp(-i^2/(2 sx^2) - j^2/(2 sy^2)) divided by their sum,
  // row index i runs along y. Row-major.
  std::vector<double> weights() const;
  void validate() const;
};

// Half-size ceil(2 sigma), shrunk so the window fits inside target_size - 1.
GaussianKernelSpec default_kernel(double sigma, int target_size);

struct PreprocessConfig {
  float dark_threshold = 0.03f;
  int target_size = 224;
  double circle_margin = 0.0;
  GaussianKernelSpec kernel = default_kernel(10.0, 224);

  void validate() const;
};

struct AugmentConfig {
  double zoom_range = 0.15;
  bool horizontal_flip = true;
  bool vertical_flip = true;
  float fill_value = 0.0f;
  std::uint64_t seed = 0;

  void validate() const;
};

ImageGrid crop_dark_border(const ImageGrid& img, float dark_threshold);

// Zeroes everything farther than (size/2)(1 - margin) from the centre (size-1)/2,
// measured in pixel-index coordinates. Throws NON_SQUARE_INPUT on rectangles.
ImageGrid apply_circle_mask(const ImageGrid& img, double circle_margin);

// Zero-pads a rectangle symmetrically up to max(h, w).
ImageGrid pad_to_square(const ImageGrid& img);

// Bilinear, pixel-centre aligned (src = (dst + 0.5) * scale - 0.5), edge-clamped.
ImageGrid resize(const ImageGrid& img, int target_size);

ImageGrid gaussian_blur(const ImageGrid& img, const GaussianKernelSpec& kernel);

// Blur of one interleaved plane without range checks; used by gaussian_blur and
// handy for linearity checks on values outside [0,1].
std::vector<double> blur_plane(std::span<const double> plane, int height, int width,
                               const GaussianKernelSpec& kernel);

// crop -> resize -> circle mask -> blur.
ImageGrid preprocess_image(const ImageGrid& img, const PreprocessConfig& cfg);

ImageGrid flip_horizontal(const ImageGrid& img);
ImageGrid flip_vertical(const ImageGrid& img);

// Scales about the centre by `factor` (>1 magnifies), sampling bilinearly and
// filling out-of-bounds points with `fill`.
ImageGrid zoom(const ImageGrid& img, double factor, float fill);

// Draws flips (p = 0.5 each) and a zoom factor in [1-r, 1+r] from `rng`.
ImageGrid augment(const ImageGrid& img, const AugmentConfig& cfg, Rng& rng);

// Same, seeded from cfg.seed.
ImageGrid augment(const ImageGrid& img, const AugmentConfig& cfg);

}  // namespace fundus
