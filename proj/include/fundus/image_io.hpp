#pragma once

#include <filesystem>

#include "fundus/image.hpp"

namespace fundus {

// Decodes PNG/JPEG to a 3-channel RGB grid scaled to [0,1] (8-bit / 255).
ImageGrid read_image(const std::filesystem::path& path);

// Writes 8-bit PNG/JPEG (by extension), rounding intensities to the nearest level.
void write_image(const std::filesystem::path& path, const ImageGrid& img);

// Header sniff only; does not decode pixels.
bool looks_like_image(const std::filesystem::path& path);

}  // namespace fundus
