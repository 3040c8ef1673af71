#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fundus/image.hpp"
#include "fundus/manifest.hpp"

namespace fundus {

struct IngestReport {
  DatasetManifest manifest;
  // "row N: reason" for every CSV row that was dropped.
  std::vector<std::string> rejects;
  std::size_t missing_images = 0;
};

// APTOS 2019 layout: CSV header id_code,diagnosis; images <id_code>.png|.jpg|.jpeg in image_dir.
IngestReport ingest_aptos(const std::filesystem::path& csv_path, const std::filesystem::path& image_dir);

// Fundus-like test card: a lit disc on black with 0, 3, 7, 12 or 18 bright lesions for grades 0..4.
ImageGrid render_synthetic(int grade, int size, std::uint64_t seed);

int synthetic_lesion_count(int grade);

// Writes n_per_class images per grade as PNG plus train.csv (APTOS layout) into out_dir.
DatasetManifest generate_synthetic(std::size_t n_per_class, int size, std::uint64_t seed,
                                   const std::filesystem::path& out_dir);

// Stratified by grade: each class keeps round(f * n_c) records for training, clamped so both
// sides get at least one. Records keep their manifest order.
std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest, double split_fraction,
                                                  std::uint64_t seed);

}  // namespace fundus
