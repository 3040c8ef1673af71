#include "fundus/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fundus/error.hpp"

namespace fundus {

namespace {

std::vector<double> gaussian_1d(double sigma, int half) {
  std::vector<double> w(2 * half + 1);
  double sum = 0.0;
  for (int t = -half; t <= half; ++t) {
    w[t + half] = std::exp(-(t * t) / (2.0 * sigma * sigma));
    sum += w[t + half];
  }
  for (double& v : w) v /= sum;
  return w;
}

float sample_bilinear(const ImageGrid& img, double y, double x, int c) {
  // Caller guarantees (y, x) is inside the clamped domain.
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height() - 1);
  const int x1 = std::min(x0 + 1, img.width() - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  const double top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
  const double bottom = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
  return static_cast<float>(top * (1.0 - fy) + bottom * fy);
}

}  // namespace

std::vector<double> GaussianKernelSpec::weights() const {
  validate();
  const auto wx = gaussian_1d(sigma_x, half_size);
  const auto wy = gaussian_1d(sigma_y, half_size);
  const int n = 2 * half_size + 1;
  std::vector<double> w(static_cast<std::size_t>(n) * n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) w[r * n + c] = wy[r] * wx[c];
  }
  return w;
}

void GaussianKernelSpec::validate() const {
  if (!(sigma_x > 0.0) || !(sigma_y > 0.0) || half_size < 1) {
    throw Error(ErrorCode::InvalidArgument, "gaussian kernel needs sigma > 0 and half_size >= 1");
  }
}

GaussianKernelSpec default_kernel(double sigma, int target_size) {
  int half = static_cast<int>(std::ceil(2.0 * sigma));
  half = std::min(half, (target_size - 2) / 2);
  return GaussianKernelSpec{sigma, sigma, std::max(half, 1)};
}

void PreprocessConfig::validate() const {
  kernel.validate();
  if (dark_threshold < 0.0f || dark_threshold > 1.0f) {
    throw Error(ErrorCode::InvalidArgument, "dark_threshold must lie in [0,1]");
  }
  if (circle_margin < 0.0 || circle_margin >= 1.0) {
    throw Error(ErrorCode::InvalidArgument, "circle_margin must lie in [0,1)");
  }
  if (target_size < 2 * kernel.half_size + 1) {
    throw Error(ErrorCode::InvalidArgument,
                "target_size " + std::to_string(target_size) + " smaller than blur window");
  }
}

void AugmentConfig::validate() const {
  if (zoom_range < 0.0 || zoom_range >= 1.0) {
    throw Error(ErrorCode::InvalidArgument, "zoom_range must lie in [0,1)");
  }
}

ImageGrid crop_dark_border(const ImageGrid& img, float dark_threshold) {
  const int h = img.height(), w = img.width(), ch = img.channels();
  std::vector<float> row_max(h, 0.0f), col_max(w, 0.0f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        const float v = img.at(y, x, c);
        row_max[y] = std::max(row_max[y], v);
        col_max[x] = std::max(col_max[x], v);
      }
    }
  }
  auto bright = [dark_threshold](float v) { return v > dark_threshold; };
  const auto top = std::find_if(row_max.begin(), row_max.end(), bright);
  if (top == row_max.end()) return img;
  const auto bottom = std::find_if(row_max.rbegin(), row_max.rend(), bright);
  const auto left = std::find_if(col_max.begin(), col_max.end(), bright);
  const auto right = std::find_if(col_max.rbegin(), col_max.rend(), bright);

  const int y0 = static_cast<int>(top - row_max.begin());
  const int y1 = h - 1 - static_cast<int>(bottom - row_max.rbegin());
  const int x0 = static_cast<int>(left - col_max.begin());
  const int x1 = w - 1 - static_cast<int>(right - col_max.rbegin());

  ImageGrid out(y1 - y0 + 1, x1 - x0 + 1, ch);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      for (int c = 0; c < ch; ++c) out.at(y - y0, x - x0, c) = img.at(y, x, c);
    }
  }
  return out;
}

ImageGrid apply_circle_mask(const ImageGrid& img, double circle_margin) {
  if (img.height() != img.width()) {
    throw Error(ErrorCode::NonSquareInput, std::to_string(img.height()) + "x" +
                                               std::to_string(img.width()) + " image");
  }
  const int n = img.height();
  const double centre = (n - 1) / 2.0;
  const double radius = (n / 2.0) * (1.0 - circle_margin);
  ImageGrid out = img;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      if (std::hypot(y - centre, x - centre) > radius) {
        for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = 0.0f;
      }
    }
  }
  return out;
}

ImageGrid pad_to_square(const ImageGrid& img) {
  const int n = std::max(img.height(), img.width());
  if (img.height() == n && img.width() == n) return img;
  const int oy = (n - img.height()) / 2;
  const int ox = (n - img.width()) / 2;
  ImageGrid out(n, n, img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) out.at(y + oy, x + ox, c) = img.at(y, x, c);
    }
  }
  return out;
}

ImageGrid resize(const ImageGrid& img, int target_size) {
  if (target_size < 1) throw Error(ErrorCode::InvalidArgument, "target_size must be >= 1");
  if (img.height() == target_size && img.width() == target_size) return img;
  const double sy = static_cast<double>(img.height()) / target_size;
  const double sx = static_cast<double>(img.width()) / target_size;
  ImageGrid out(target_size, target_size, img.channels());
  for (int y = 0; y < target_size; ++y) {
    const double src_y = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    for (int x = 0; x < target_size; ++x) {
      const double src_x = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      for (int c = 0; c < img.channels(); ++c) {
        out.at(y, x, c) = std::clamp(sample_bilinear(img, src_y, src_x, c), 0.0f, 1.0f);
      }
    }
  }
  return out;
}

std::vector<double> blur_plane(std::span<const double> plane, int height, int width,
                               const GaussianKernelSpec& kernel) {
  kernel.validate();
  const int k = kernel.half_size;
  // The normalized 2-D window factorizes into x and y passes; edge replication
  // clamps each axis independently, so the factorization is exact.
  const auto wx = gaussian_1d(kernel.sigma_x, k);
  const auto wy = gaussian_1d(kernel.sigma_y, k);

  std::vector<double> tmp(plane.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int i = -k; i <= k; ++i) {
        acc += wx[i + k] * plane[y * width + std::clamp(x + i, 0, width - 1)];
      }
      tmp[y * width + x] = acc;
    }
  }
  std::vector<double> out(plane.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int j = -k; j <= k; ++j) {
        acc += wy[j + k] * tmp[std::clamp(y + j, 0, height - 1) * width + x];
      }
      out[y * width + x] = acc;
    }
  }
  return out;
}

ImageGrid gaussian_blur(const ImageGrid& img, const GaussianKernelSpec& kernel) {
  const int h = img.height(), w = img.width(), ch = img.channels();
  ImageGrid out(h, w, ch);
  std::vector<double> plane(static_cast<std::size_t>(h) * w);
  for (int c = 0; c < ch; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) plane[y * w + x] = img.at(y, x, c);
    }
    const auto blurred = blur_plane(plane, h, w, kernel);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out.at(y, x, c) = std::clamp(static_cast<float>(blurred[y * w + x]), 0.0f, 1.0f);
      }
    }
  }
  return out;
}

ImageGrid preprocess_image(const ImageGrid& img, const PreprocessConfig& cfg) {
  cfg.validate();
  ImageGrid out = crop_dark_border(img, cfg.dark_threshold);
  out = resize(out, cfg.target_size);
  out = apply_circle_mask(out, cfg.circle_margin);
  return gaussian_blur(out, cfg.kernel);
}

ImageGrid flip_horizontal(const ImageGrid& img) {
  ImageGrid out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) {
        out.at(y, img.width() - 1 - x, c) = img.at(y, x, c);
      }
    }
  }
  return out;
}

ImageGrid flip_vertical(const ImageGrid& img) {
  ImageGrid out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) {
        out.at(img.height() - 1 - y, x, c) = img.at(y, x, c);
      }
    }
  }
  return out;
}

ImageGrid zoom(const ImageGrid& img, double factor, float fill) {
  if (!(factor > 0.0)) throw Error(ErrorCode::InvalidArgument, "zoom factor must be positive");
  if (factor == 1.0) return img;
  const double cy = img.height() / 2.0;
  const double cx = img.width() / 2.0;
  ImageGrid out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y) {
    // Pixel centres sit at integer + 0.5; map back through the inverse scale.
    const double src_y = cy + (y + 0.5 - cy) / factor - 0.5;
    for (int x = 0; x < img.width(); ++x) {
      const double src_x = cx + (x + 0.5 - cx) / factor - 0.5;
      const bool outside = src_y < -0.5 || src_y > img.height() - 0.5 || src_x < -0.5 ||
                           src_x > img.width() - 0.5;
      for (int c = 0; c < img.channels(); ++c) {
        if (outside) {
          out.at(y, x, c) = fill;
        } else {
          const double yy = std::clamp(src_y, 0.0, img.height() - 1.0);
          const double xx = std::clamp(src_x, 0.0, img.width() - 1.0);
          out.at(y, x, c) = sample_bilinear(img, yy, xx, c);
        }
      }
    }
  }
  return out;
}

ImageGrid augment(const ImageGrid& img, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Draw every variate unconditionally so the stream position does not depend on cfg flags.
  const bool flip_h = coin(rng);
  const bool flip_v = coin(rng);
  const double factor = 1.0 + cfg.zoom_range * (2.0 * unit(rng) - 1.0);

  ImageGrid out = img;
  if (cfg.horizontal_flip && flip_h) out = flip_horizontal(out);
  if (cfg.vertical_flip && flip_v) out = flip_vertical(out);
  if (factor != 1.0) out = zoom(out, factor, cfg.fill_value);
  return out;
}

ImageGrid augment(const ImageGrid& img, const AugmentConfig& cfg) {
  Rng rng(cfg.seed);
  return augment(img, cfg, rng);
}

}  // namespace fundus
