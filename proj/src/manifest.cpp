#include "fundus/manifest.hpp"

#include <fstream>
#include <sstream>

#include "fundus/error.hpp"

namespace fundus {

const char* to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::All: return "all";
    case SplitTag::Train: return "train";
    case SplitTag::Val: return "val";
    case SplitTag::Test: return "test";
  }
  return "all";
}

void write_manifest_csv(const DatasetManifest& manifest, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "id,source_id,image_path,grade\n";
  for (const auto& r : manifest.records) {
    out << r.id << ',' << (r.source_id.empty() ? r.id : r.source_id) << ','
        << r.image_path.string() << ',' << r.grade << '\n';
  }
}

DatasetManifest read_manifest_csv(const std::filesystem::path& path, SplitTag tag) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("id,source_id,image_path,grade", 0) != 0) {
    throw Error(ErrorCode::MalformedCsv, path.string() + ": unexpected manifest header");
  }
  DatasetManifest m;
  m.split_tag = tag;
  m.provenance = path.string();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    SampleRecord r;
    std::string path_str, grade_str;
    if (!std::getline(ss, r.id, ',') || !std::getline(ss, r.source_id, ',') ||
        !std::getline(ss, path_str, ',') || !std::getline(ss, grade_str)) {
      throw Error(ErrorCode::MalformedCsv, path.string() + ": bad row '" + line + "'");
    }
    r.image_path = path_str;
    try {
      r.grade = std::stoi(grade_str);
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedCsv, path.string() + ": bad grade '" + grade_str + "'");
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

}  // namespace fundus
