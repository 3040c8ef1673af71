#include "fundus/shapecalc.hpp"

#include <string>

#include "fundus/error.hpp"

namespace fundus {

namespace {

void check_positive(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

std::string dims(const VolumeShape& s) {
  return std::to_string(s.width) + "x" + std::to_string(s.height) + "x" + std::to_string(s.depth);
}

}  // namespace

VolumeShape conv_output_shape(const VolumeShape& in, const ConvSpec& spec) {
  check_positive(spec.filter >= 1 && spec.num_filters >= 1 && spec.stride >= 1 &&
                     spec.padding >= 0,
                 "conv spec needs F, K, S >= 1 and P >= 0");
  if (in.width + 2 * spec.padding < spec.filter || in.height + 2 * spec.padding < spec.filter) {
    throw Error(ErrorCode::FilterTooLarge,
                "filter " + std::to_string(spec.filter) + " exceeds padded input " + dims(in));
  }
  return VolumeShape{(in.width + 2 * spec.padding - spec.filter) / spec.stride + 1,
                     (in.height + 2 * spec.padding - spec.filter) / spec.stride + 1,
                     spec.num_filters};
}

VolumeShape pool_output_shape(const VolumeShape& in, const PoolSpec& spec) {
  check_positive(spec.window >= 1 && spec.stride >= 1, "pool spec needs F, S >= 1");
  if (in.width < spec.window || in.height < spec.window) {
    throw Error(ErrorCode::WindowTooLarge,
                "window " + std::to_string(spec.window) + " exceeds input " + dims(in));
  }
  return VolumeShape{(in.width - spec.window) / spec.stride + 1,
                     (in.height - spec.window) / spec.stride + 1, in.depth};
}

std::vector<VolumeShape> validate_chain(const VolumeShape& input,
                                        const std::vector<ChainLayer>& layers) {
  if (layers.empty()) throw Error(ErrorCode::EmptyChain, "layer chain is empty");
  std::vector<VolumeShape> shapes;
  shapes.reserve(layers.size());
  VolumeShape current = input;
  for (const auto& layer : layers) {
    if (const auto* conv = std::get_if<ConvSpec>(&layer)) {
      current = conv_output_shape(current, *conv);
    } else if (const auto* pool = std::get_if<PoolSpec>(&layer)) {
      current = pool_output_shape(current, *pool);
    } else if (std::holds_alternative<FlattenMarker>(layer)) {
      current = VolumeShape{1, 1, current.volume(), true};
    } else {
      const auto& dense = std::get<DenseWidth>(layer);
      if (!current.flat) {
        throw Error(ErrorCode::DenseBeforeFlatten, "dense layer applied to volume " + dims(current));
      }
      check_positive(dense.units >= 1, "dense width must be >= 1");
      current = VolumeShape{1, 1, dense.units, true};
    }
    shapes.push_back(current);
  }
  return shapes;
}

}  // namespace fundus
