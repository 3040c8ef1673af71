#include "fundus/image.hpp"

#include <algorithm>
#include <string>

#include "fundus/error.hpp"

namespace fundus {

namespace {

void check_dims(int height, int width, int channels) {
  if (height < 1 || width < 1 || (channels != 1 && channels != 3)) {
    throw Error(ErrorCode::InvalidArgument,
                "image dims must be >=1 with 1 or 3 channels, got " + std::to_string(height) + "x" +
                    std::to_string(width) + "x" + std::to_string(channels));
  }
}

}  // namespace

ImageGrid::ImageGrid(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
  check_dims(height, width, channels);
  pixels_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

ImageGrid ImageGrid::from_values(int height, int width, int channels, std::vector<float> values) {
  check_dims(height, width, channels);
  if (values.size() != static_cast<std::size_t>(height) * width * channels) {
    throw Error(ErrorCode::InvalidArgument, "pixel buffer size does not match dimensions");
  }
  ImageGrid img;
  img.height_ = height;
  img.width_ = width;
  img.channels_ = channels;
  img.pixels_ = std::move(values);
  if (!img.in_unit_range()) {
    throw Error(ErrorCode::InvalidIntensity, "intensities must lie in [0,1]");
  }
  return img;
}

bool ImageGrid::in_unit_range() const noexcept {
  return std::all_of(pixels_.begin(), pixels_.end(),
                     [](float v) { return v >= 0.0f && v <= 1.0f; });
}

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::InvalidIntensity: return "INVALID_INTENSITY";
    case ErrorCode::NonSquareInput: return "NON_SQUARE_INPUT";
    case ErrorCode::InvalidGrade: return "INVALID_GRADE";
    case ErrorCode::EmptyClass: return "EMPTY_CLASS";
    case ErrorCode::IndexOutOfRange: return "INDEX_OUT_OF_RANGE";
    case ErrorCode::FilterTooLarge: return "FILTER_TOO_LARGE";
    case ErrorCode::WindowTooLarge: return "WINDOW_TOO_LARGE";
    case ErrorCode::DenseBeforeFlatten: return "DENSE_BEFORE_FLATTEN";
    case ErrorCode::EmptyChain: return "EMPTY_CHAIN";
    case ErrorCode::UnknownBackbone: return "UNKNOWN_BACKBONE";
    case ErrorCode::ShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::SpecOrderViolation: return "SPEC_ORDER_VIOLATION";
    case ErrorCode::EmptyDataset: return "EMPTY_DATASET";
    case ErrorCode::NonFiniteLoss: return "NON_FINITE_LOSS";
    case ErrorCode::UnpreprocessedInput: return "UNPREPROCESSED_INPUT";
    case ErrorCode::CheckpointMismatch: return "CHECKPOINT_MISMATCH";
    case ErrorCode::LengthMismatch: return "LENGTH_MISMATCH";
    case ErrorCode::EmptyInput: return "EMPTY_INPUT";
    case ErrorCode::DegenerateMarginals: return "DEGENERATE_MARGINALS";
    case ErrorCode::MalformedCsv: return "MALFORMED_CSV";
    case ErrorCode::NoValidRecords: return "NO_VALID_RECORDS";
    case ErrorCode::ClassTooSmall: return "CLASS_TOO_SMALL";
    case ErrorCode::Io: return "IO_ERROR";
    case ErrorCode::Config: return "CONFIG_ERROR";
  }
  return "UNKNOWN";
}

}  // namespace fundus
