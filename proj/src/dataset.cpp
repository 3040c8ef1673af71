#include "fundus/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "fundus/error.hpp"
#include "fundus/image_io.hpp"
#include "fundus/labels.hpp"
#include "fundus/random.hpp"

namespace fundus {

namespace {

std::vector<std::string> split_csv_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

IngestReport ingest_aptos(const std::filesystem::path& csv_path, const std::filesystem::path& image_dir) {
  std::ifstream in(csv_path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MalformedCsv, csv_path.string() + " is empty");
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);

  const auto header = split_csv_line(line);
  int id_col = -1, grade_col = -1;
  for (int i = 0; i < static_cast<int>(header.size()); ++i) {
    const std::string h = trim(header[i]);
    if (h == "id_code") id_col = i;
    else if (h == "diagnosis") grade_col = i;
  }
  if (id_col < 0 || grade_col < 0) {
    throw Error(ErrorCode::MalformedCsv, csv_path.string() + ": header must contain id_code,diagnosis");
  }
  const auto needed = static_cast<std::size_t>(std::max(id_col, grade_col));

  IngestReport report;
  report.manifest.provenance = "aptos:" + csv_path.string();
  std::set<std::string> seen;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() <= needed) {
      throw Error(ErrorCode::MalformedCsv, csv_path.string() + " row " + std::to_string(row) +
                                               ": expected " + std::to_string(header.size()) + " fields");
    }
    const std::string id = trim(fields[id_col]);
    const std::string diag = trim(fields[grade_col]);
    const std::string where = "row " + std::to_string(row) + " (" + id + "): ";

    int grade = -1;
    std::size_t consumed = 0;
    try {
      grade = std::stoi(diag, &consumed);
    } catch (const std::exception&) {
      consumed = 0;
    }
    if (consumed != diag.size() || diag.empty()) {
      report.rejects.push_back(where + "non-integer diagnosis '" + diag + "'");
      continue;
    }
    if (grade < 0 || grade >= kNumGrades) {
      report.rejects.push_back(where + "diagnosis " + diag + " outside 0..4");
      continue;
    }
    if (id.empty() || !seen.insert(id).second) {
      report.rejects.push_back(where + "empty or duplicate id_code");
      continue;
    }

    std::filesystem::path found;
    for (const char* ext : {".png", ".jpg", ".jpeg"}) {
      const auto candidate = image_dir / (id + ext);
      if (looks_like_image(candidate)) {
        found = candidate;
        break;
      }
    }
    if (found.empty()) {
      ++report.missing_images;
      continue;
    }
    report.manifest.records.push_back(SampleRecord{id, found, grade, id});
  }
  if (report.missing_images > 0) {
    spdlog::warn("{}: {} rows skipped for missing or unreadable images", csv_path.string(), report.missing_images);
  }
  if (!report.rejects.empty()) {
    spdlog::warn("{}: {} rows rejected", csv_path.string(), report.rejects.size());
  }
  if (report.manifest.empty()) throw Error(ErrorCode::NoValidRecords, csv_path.string());
  return report;
}

int synthetic_lesion_count(int grade) {
  static constexpr int kCounts[kNumGrades] = {0, 3, 7, 12, 18};
  return kCounts[Grade(grade).value()];
}

ImageGrid render_synthetic(int grade, int size, std::uint64_t seed) {
  if (size < 16) throw Error(ErrorCode::InvalidArgument, "synthetic images need size >= 16");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.015);

  const double cx = size * (0.5 + 0.03 * (unit(rng) - 0.5));
  const double cy = size * (0.5 + 0.03 * (unit(rng) - 0.5));
  const double radius = size * (0.40 + 0.02 * unit(rng));
  const double tint = 0.9 + 0.1 * unit(rng);

  // Optic disc: present in every grade so brightness alone is not the only cue.
  const double od_angle = 2.0 * std::numbers::pi * unit(rng);
  const double od_x = cx + 0.55 * radius * std::cos(od_angle);
  const double od_y = cy + 0.55 * radius * std::sin(od_angle);
  const double od_r = 0.13 * radius;

  struct Blob {
    double x, y, r;
  };
  std::vector<Blob> lesions;
  for (int i = 0; i < synthetic_lesion_count(grade); ++i) {
    const double a = 2.0 * std::numbers::pi * unit(rng);
    const double d = 0.75 * radius * std::sqrt(unit(rng));
    lesions.push_back({cx + d * std::cos(a), cy + d * std::sin(a), size * (0.03 + 0.012 * unit(rng))});
  }

  ImageGrid img(size, size, 3);
  constexpr float kFundus[3] = {0.58f, 0.27f, 0.12f};
  constexpr float kOpticDisc[3] = {0.92f, 0.72f, 0.48f};
  constexpr float kExudate[3] = {0.98f, 0.90f, 0.38f};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double dist = std::hypot(px - cx, py - cy);
      if (dist > radius) continue;
      const double vignette = 1.0 - 0.35 * (dist / radius) * (dist / radius);
      float rgb[3];
      for (int c = 0; c < 3; ++c) rgb[c] = static_cast<float>(kFundus[c] * vignette * tint);

      const double od = std::hypot(px - od_x, py - od_y) / od_r;
      if (od < 1.5) {
        const double w = std::exp(-od * od);
        for (int c = 0; c < 3; ++c) rgb[c] = static_cast<float>(rgb[c] * (1.0 - w) + kOpticDisc[c] * w);
      }
      for (const auto& b : lesions) {
        const double t = std::hypot(px - b.x, py - b.y) / b.r;
        if (t >= 1.6) continue;
        const double w = std::exp(-t * t);
        for (int c = 0; c < 3; ++c) rgb[c] = static_cast<float>(rgb[c] * (1.0 - w) + kExudate[c] * w);
      }
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = std::clamp(static_cast<float>(rgb[c] + noise(rng)), 0.0f, 1.0f);
      }
    }
  }
  return img;
}

DatasetManifest generate_synthetic(std::size_t n_per_class, int size, std::uint64_t seed,
                                   const std::filesystem::path& out_dir) {
  if (n_per_class < 1) throw Error(ErrorCode::InvalidArgument, "n_per_class must be >= 1");
  std::filesystem::create_directories(out_dir);
  DatasetManifest m;
  m.provenance = "synthetic n=" + std::to_string(n_per_class) + " size=" + std::to_string(size) +
                 " seed=" + std::to_string(seed);
  std::ofstream csv(out_dir / "train.csv");
  if (!csv) throw Error(ErrorCode::Io, "cannot write " + (out_dir / "train.csv").string());
  csv << "id_code,diagnosis\n";
  for (std::size_t i = 0; i < n_per_class; ++i) {
    for (int g = 0; g < kNumGrades; ++g) {
      char id[32];
      std::snprintf(id, sizeof id, "syn%05zu_g%d", i, g);
      const auto path = out_dir / (std::string(id) + ".png");
      const std::uint64_t stream = i * kNumGrades + static_cast<std::uint64_t>(g);
      write_image(path, render_synthetic(g, size, derive_seed(seed, stream)));
      csv << id << ',' << g << '\n';
      m.records.push_back(SampleRecord{id, path, g, id});
    }
  }
  return m;
}

std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest, double split_fraction,
                                                  std::uint64_t seed) {
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "split_fraction must lie in (0,1)");
  }
  if (manifest.size() < 2) throw Error(ErrorCode::ClassTooSmall, "need at least 2 records to split");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < manifest.size(); ++i) by_class[manifest.records[i].grade].push_back(i);

  std::vector<bool> is_train(manifest.size(), false);
  for (auto& [cls, idx] : by_class) {
    if (idx.size() < 2) {
      throw Error(ErrorCode::ClassTooSmall, "grade " + std::to_string(cls) + " has " +
                                                std::to_string(idx.size()) + " record(s)");
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(cls)));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<double>(idx.size());
    const auto n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(split_fraction * n)), 1,
                                                 idx.size() - 1);
    for (std::size_t k = 0; k < n_train; ++k) is_train[idx[k]] = true;
  }

  DatasetManifest train, val;
  train.split_tag = SplitTag::Train;
  val.split_tag = SplitTag::Val;
  train.provenance = manifest.provenance + "; split train f=" + std::to_string(split_fraction);
  val.provenance = manifest.provenance + "; split val f=" + std::to_string(split_fraction);
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    (is_train[i] ? train : val).records.push_back(manifest.records[i]);
  }
  return {std::move(train), std::move(val)};
}

}  // namespace fundus
