#include "fundus/image_io.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "fundus/error.hpp"

namespace fundus {

ImageGrid read_image(const std::filesystem::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error(ErrorCode::Io, "cannot decode image " + path.string());
  ImageGrid img(bgr.rows, bgr.cols, 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[x][2 - c] / 255.0f;
    }
  }
  return img;
}

void write_image(const std::filesystem::path& path, const ImageGrid& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  cv::Mat out(img.height(), img.width(), img.channels() == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = out.ptr<unsigned char>(y);
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) {
        // RGB -> BGR for 3-channel output.
        const int dst = img.channels() == 3 ? 2 - c : c;
        const float v = std::clamp(img.at(y, x, c), 0.0f, 1.0f);
        row[x * img.channels() + dst] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  if (!cv::imwrite(path.string(), out)) throw Error(ErrorCode::Io, "cannot write image " + path.string());
}

bool looks_like_image(const std::filesystem::path& path) {
  return std::filesystem::is_regular_file(path) && cv::haveImageReader(path.string());
}

}  // namespace fundus
