#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace fundus {

struct SampleRecord {
  std::string id;
  std::filesystem::path image_path;
  int grade = 0;
  // Id of the original record; differs from `id` only for resampling replicas.
  std::string source_id;

  bool operator==(const SampleRecord&) const = default;
};

enum class SplitTag { All, Train, Val, Test };

struct DatasetManifest {
  std::vector<SampleRecord> records;
  SplitTag split_tag = SplitTag::All;
  std::string provenance;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
};

const char* to_string(SplitTag tag);

// CSV with header id,source_id,image_path,grade.
void write_manifest_csv(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest_csv(const std::filesystem::path& path, SplitTag tag);

}  // namespace fundus
