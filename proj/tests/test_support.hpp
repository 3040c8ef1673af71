#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <string>

#include <unistd.h>

#include "fundus/error.hpp"
#include "fundus/image.hpp"

namespace fundus::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("fundus_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline ImageGrid random_image(int h, int w, int c, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImageGrid img(h, w, c);
  for (float& v : img.values()) v = u(rng);
  return img;
}

// Code of the fundus::Error thrown by `body`, or nullopt if it returns normally.
template <class F>
std::optional<ErrorCode> error_code_of(F&& body) {
  try {
    body();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace fundus::testing
