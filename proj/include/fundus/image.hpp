#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fundus {

// H x W x C raster, interleaved channels, row-major. Intensities live in [0,1].
class ImageGrid {
 public:
  ImageGrid() = default;
  ImageGrid(int height, int width, int channels, float fill = 0.0f);

  // Validates dimensions and that every value lies in [0,1].
  static ImageGrid from_values(int height, int width, int channels, std::vector<float> values);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }

  float& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
  float at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }

  std::span<float> values() noexcept { return pixels_; }
  std::span<const float> values() const noexcept { return pixels_; }

  bool in_unit_range() const noexcept;

  bool operator==(const ImageGrid&) const = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> pixels_;
};

}  // namespace fundus
