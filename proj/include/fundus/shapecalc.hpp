#pragma once

#include <variant>
#include <vector>

namespace fundus {

// Width x height x depth. A flattened feature vector is (1, 1, n) with `flat` set.
struct VolumeShape {
  int width = 1;
  int height = 1;
  int depth = 1;
  bool flat = false;

  int volume() const noexcept { return width * height * depth; }
  bool operator==(const VolumeShape&) const = default;
};

struct ConvSpec {
  int filter = 1;       // F
  int num_filters = 1;  // K
  int padding = 0;      // P
  int stride = 1;       // S
};

struct PoolSpec {
  int window = 1;  // F
  int stride = 1;  // S
};

struct FlattenMarker {};

struct DenseWidth {
  int units = 1;
};

using ChainLayer = std::variant<ConvSpec, PoolSpec, FlattenMarker, DenseWidth>;

// X2 = floor((X1 + 2P - F) / S) + 1, Z2 = K. Throws FILTER_TOO_LARGE if X1 + 2P < F.
VolumeShape conv_output_shape(const VolumeShape& in, const ConvSpec& spec);

// X2 = floor((X1 - F) / S) + 1, Z2 = Z1. Throws WINDOW_TOO_LARGE if X1 < F.
VolumeShape pool_output_shape(const VolumeShape& in, const PoolSpec& spec);

// Padding that keeps the spatial size for stride 1 and odd F.
constexpr int same_padding(int filter) noexcept { return (filter - 1) / 2; }

// Shape after each layer. Dense layers must follow a flatten (or another dense).
std::vector<VolumeShape> validate_chain(const VolumeShape& input,
                                        const std::vector<ChainLayer>& layers);

}  // namespace fundus
