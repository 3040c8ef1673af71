#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "fundus/config.hpp"
#include "fundus/dataset.hpp"
#include "fundus/error.hpp"
#include "fundus/image_io.hpp"
#include "fundus/labels.hpp"
#include "fundus/manifest.hpp"
#include "test_support.hpp"

using namespace fundus;
using fundus::testing::error_code_of;
using fundus::testing::TempDir;

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_png(const std::filesystem::path& p) { write_image(p, ImageGrid(8, 8, 3, 0.5f)); }

DatasetManifest balanced(int per_class) {
  DatasetManifest m;
  for (int g = 0; g < kNumGrades; ++g) {
    for (int i = 0; i < per_class; ++i) {
      const std::string id = "r" + std::to_string(g) + "_" + std::to_string(i);
      m.records.push_back(SampleRecord{id, id + ".png", g, id});
    }
  }
  return m;
}

}  // namespace

TEST_CASE("image io round trip") {
  TempDir dir("io");
  ImageGrid img(5, 7, 3);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>((y * 7 + x) * 3 + c) / 104.0f;
  write_image(dir.path() / "a.png", img);
  CHECK(looks_like_image(dir.path() / "a.png"));
  const ImageGrid back = read_image(dir.path() / "a.png");
  REQUIRE(back.height() == 5);
  REQUIRE(back.width() == 7);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back.values()[i] - img.values()[i]) <= 0.5f / 255 + 1e-6f);
  CHECK(error_code_of([&] { read_image(dir.path() / "missing.png"); }) == ErrorCode::Io);
  CHECK_FALSE(looks_like_image(dir.path() / "missing.png"));
}

TEST_CASE("ingest_aptos") {
  TempDir dir("ingest");
  for (const char* id : {"aa", "bb", "cc"}) write_png(dir.path() / (std::string(id) + ".png"));

  SUBCASE("all images present") {
    write_file(dir.path() / "t.csv", "id_code,diagnosis\naa,0\nbb,3\ncc,4\n");
    const auto r = ingest_aptos(dir.path() / "t.csv", dir.path());
    REQUIRE(r.manifest.size() == 3);
    CHECK(r.manifest.records[1].id == "bb");
    CHECK(r.manifest.records[1].grade == 3);
    CHECK(r.manifest.records[2].image_path == dir.path() / "cc.png");
    CHECK(r.rejects.empty());
    CHECK(r.missing_images == 0);
  }
  SUBCASE("bad grades, duplicates and missing images") {
    write_file(dir.path() / "t.csv",
               "\xEF\xBB\xBFid_code,diagnosis\r\naa,7\r\nbb,x\r\ncc,2\r\ncc,1\r\ndd,1\r\n\r\n");
    const auto r = ingest_aptos(dir.path() / "t.csv", dir.path());
    CHECK(r.manifest.size() == 1);
    CHECK(r.rejects.size() == 3);
    CHECK(r.missing_images == 1);
  }
  SUBCASE("jpeg and column order") {
    write_image(dir.path() / "ee.jpg", ImageGrid(8, 8, 3, 0.3f));
    write_file(dir.path() / "t.csv", "diagnosis,id_code\n1,ee\n");
    const auto r = ingest_aptos(dir.path() / "t.csv", dir.path());
    REQUIRE(r.manifest.size() == 1);
    CHECK(r.manifest.records[0].image_path.extension() == ".jpg");
  }
  SUBCASE("errors") {
    write_file(dir.path() / "h.csv", "id,grade\naa,1\n");
    CHECK(error_code_of([&] { ingest_aptos(dir.path() / "h.csv", dir.path()); }) == ErrorCode::MalformedCsv);
    write_file(dir.path() / "s.csv", "id_code,diagnosis\naa\n");
    CHECK(error_code_of([&] { ingest_aptos(dir.path() / "s.csv", dir.path()); }) == ErrorCode::MalformedCsv);
    write_file(dir.path() / "n.csv", "id_code,diagnosis\nzz,1\naa,9\n");
    CHECK(error_code_of([&] { ingest_aptos(dir.path() / "n.csv", dir.path()); }) == ErrorCode::NoValidRecords);
    CHECK(error_code_of([&] { ingest_aptos(dir.path() / "nope.csv", dir.path()); }) == ErrorCode::Io);
  }
}

TEST_CASE("synthetic generator") {
  TempDir a("synth_a"), b("synth_b");
  const auto m = generate_synthetic(2, 32, 7, a.path());
  CHECK(m.size() == 10);
  for (int g = 0; g < kNumGrades; ++g) CHECK(class_histogram(m).at(g) == 2);
  CHECK(std::filesystem::exists(a.path() / "train.csv"));

  const auto ingested = ingest_aptos(a.path() / "train.csv", a.path());
  CHECK(ingested.manifest.size() == 10);
  CHECK(class_histogram(ingested.manifest) == class_histogram(m));

  const auto m2 = generate_synthetic(2, 32, 7, b.path());
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK(slurp(m.records[i].image_path) == slurp(m2.records[i].image_path));
  }
  CHECK(render_synthetic(3, 40, 5) == render_synthetic(3, 40, 5));
  CHECK_FALSE(render_synthetic(3, 40, 5) == render_synthetic(3, 40, 6));
  CHECK(error_code_of([] { render_synthetic(0, 8, 1); }) == ErrorCode::InvalidArgument);
  CHECK(error_code_of([&] { generate_synthetic(0, 32, 1, a.path()); }) == ErrorCode::InvalidArgument);

  for (int g = 1; g < kNumGrades; ++g) CHECK(synthetic_lesion_count(g) > synthetic_lesion_count(g - 1));
}

TEST_CASE("synthetic grades 0 and 4 separate on mean intensity") {
  // Threshold probe fitted on 50 images, scored on 50 others.
  const auto mean = [](const ImageGrid& img) {
    return std::accumulate(img.values().begin(), img.values().end(), 0.0) / static_cast<double>(img.size());
  };
  std::vector<std::pair<double, int>> fit, held;
  for (int i = 0; i < 100; ++i) {
    const int g = i % 2 == 0 ? 0 : 4;
    (i < 50 ? fit : held).emplace_back(mean(render_synthetic(g, 64, 1000 + i)), g);
  }
  double best_t = 0.0;
  int best_correct = -1;
  for (const auto& [t, unused] : fit) {
    int correct = 0;
    for (const auto& [v, g] : fit) correct += (v > t ? 4 : 0) == g;
    if (correct > best_correct) best_correct = correct, best_t = t;
  }
  int correct = 0;
  for (const auto& [v, g] : held) correct += (v > best_t ? 4 : 0) == g;
  CHECK(correct / 50.0 > 0.9);
}

TEST_CASE("split") {
  const DatasetManifest m = balanced(20);
  const auto [train, val] = split(m, 0.8, 3);
  CHECK(train.size() == 80);
  CHECK(val.size() == 20);
  for (int g = 0; g < kNumGrades; ++g) {
    CHECK(class_histogram(train).at(g) == 16);
    CHECK(class_histogram(val).at(g) == 4);
  }
  std::set<std::string> ids;
  for (const auto& r : train.records) ids.insert(r.id);
  for (const auto& r : val.records) CHECK(ids.insert(r.id).second);
  CHECK(ids.size() == m.size());

  const auto [train2, val2] = split(m, 0.8, 3);
  CHECK(train2.records == train.records);
  CHECK(val2.records == val.records);
  const auto [train3, val3] = split(m, 0.8, 4);
  CHECK_FALSE(val3.records == val.records);

  CHECK(train.split_tag == SplitTag::Train);
  CHECK(val.split_tag == SplitTag::Val);

  SUBCASE("tiny classes keep one record on each side") {
    const auto [t, v] = split(balanced(2), 0.99, 1);
    CHECK(t.size() == 5);
    CHECK(v.size() == 5);
  }
  SUBCASE("errors") {
    DatasetManifest small = balanced(2);
    small.records.pop_back();
    CHECK(error_code_of([&] { split(small, 0.5, 1); }) == ErrorCode::ClassTooSmall);
    CHECK(error_code_of([&] { split(m, 1.0, 1); }) == ErrorCode::InvalidArgument);
  }
}

TEST_CASE("manifest csv round trip") {
  TempDir dir("manifest");
  DatasetManifest m = balanced(2);
  m.records[3].id = "r0_1#2";
  write_manifest_csv(m, dir.path() / "m.csv");
  const DatasetManifest back = read_manifest_csv(dir.path() / "m.csv", SplitTag::Train);
  CHECK(back.records == m.records);
  CHECK(back.split_tag == SplitTag::Train);
}

TEST_CASE("pipeline config") {
  SUBCASE("defaults") {
    const PipelineConfig c;
    CHECK(c.train_base.learning_rate == 5e-5);
    CHECK(c.train_base.batch_size == 32);
    CHECK(c.train_base.epochs == 15);
    CHECK(c.train_base.l2_on_dense == 1e-3);
    CHECK(c.train_meta.batch_size == 64);
    CHECK(c.train_meta.epochs == 200);
    CHECK(c.backbones[0].name == "densenet121");
    CHECK(c.backbones[1].name == "inceptionv3");
    CHECK(c.preprocess.kernel.sigma_x == 10.0);
    CHECK(c.preprocess.target_size == 224);
    CHECK(c.split_fraction == 0.85);
    CHECK_NOTHROW(c.validate());
  }
  SUBCASE("parse and override") {
    PipelineConfig c;
    apply_overrides(c, parse_key_values("# comment\nseed = 9\n backbones = tiny-cnn , tiny-cnn\n"
                                        "preprocess.target_size = 64\npreprocess.sigma_x = 1 # trailing\n"
                                        "preprocess.sigma_y = 1\ntrain_base.dropout = 0.25\n"));
    CHECK(c.seed == 9);
    CHECK(c.backbones[1].name == "tiny-cnn");
    CHECK(c.preprocess.kernel.half_size == 2);
    CHECK(c.head.dropout_rate == 0.25);
    CHECK_NOTHROW(c.validate());
  }
  SUBCASE("text round trip") {
    PipelineConfig c;
    apply_overrides(c, parse_key_values("seed = 4\nresample_target = 123\ntrain_meta.learning_rate = 0.00123\n"
                                        "augment.enabled = false\nmeta.widths = 8,8,8,8,8,8,8\nstacking.folds = 3\n"));
    TempDir dir("cfg");
    std::ofstream(dir.path() / "c.txt") << to_text(c);
    const PipelineConfig back = load_config(dir.path() / "c.txt");
    CHECK(to_text(back) == to_text(c));
    CHECK(back.train_meta.learning_rate == 0.00123);
    CHECK(back.meta.widths == std::vector<int>(7, 8));
    CHECK_FALSE(back.augment_enabled);
    CHECK(back.stacking_folds == 3);
  }
  SUBCASE("errors") {
    PipelineConfig c;
    CHECK(error_code_of([&] { apply_overrides(c, {{"no.such", "1"}}); }) == ErrorCode::Config);
    CHECK(error_code_of([&] { apply_overrides(c, {{"seed", "abc"}}); }) == ErrorCode::Config);
    CHECK(error_code_of([&] { apply_overrides(c, {{"backbones", "tiny-cnn"}}); }) == ErrorCode::Config);
    CHECK(error_code_of([] { parse_key_values("just words"); }) == ErrorCode::Config);
    PipelineConfig bad;
    bad.split_fraction = 1.0;
    CHECK(error_code_of([&] { bad.validate(); }) == ErrorCode::Config);
    PipelineConfig aptos;
    aptos.source = DataSource::Aptos;
    CHECK(error_code_of([&] { aptos.validate(); }) == ErrorCode::Config);
    PipelineConfig unknown;
    unknown.backbones[0].name = "resnet";
    CHECK(error_code_of([&] { unknown.validate(); }) == ErrorCode::UnknownBackbone);
  }
}
