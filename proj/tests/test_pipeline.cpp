#include <doctest.h>

#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fundus/cli.hpp"
#include "fundus/config.hpp"
#include "fundus/error.hpp"
#include "fundus/labels.hpp"
#include "fundus/pipeline.hpp"
#include "test_support.hpp"

using namespace fundus;
using fundus::testing::error_code_of;
using fundus::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Tiny run: 4 images per grade at 32 px, a couple of epochs.
PipelineConfig tiny_config(const std::filesystem::path& out) {
  PipelineConfig c;
  apply_overrides(c, parse_key_values("data.synthetic_n_per_class = 4\ndata.synthetic_size = 32\n"
                                      "preprocess.target_size = 32\npreprocess.sigma_x = 1\n"
                                      "preprocess.sigma_y = 1\nbackbones = tiny-cnn,tiny-cnn\n"
                                      "backbone.frozen_fraction = 0\nresample_target = 6\nsplit_fraction = 0.5\n"
                                      "train_base.epochs = 2\ntrain_base.learning_rate = 0.003\n"
                                      "train_base.batch_size = 8\ntrain_meta.epochs = 3\n"
                                      "train_meta.learning_rate = 0.001\nseed = 5\n"));
  c.output_dir = out;
  return c;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "fundus");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("full pipeline on a tiny synthetic set") {
  TempDir a("pipe_a"), b("pipe_b");
  const RunReport report = run_pipeline(tiny_config(a.path()));

  for (const char* name : {"metrics_json", "metrics_text", "confusion", "config", "report", "checkpoint_meta",
                           "manifest_train", "manifest_val", "manifest_train_resampled"}) {
    REQUIRE(report.artifacts.count(name) == 1);
    CHECK(std::filesystem::exists(report.artifacts.at(name)));
  }
  REQUIRE(report.branches.size() == 2);
  for (const auto& br : report.branches) {
    CHECK(std::filesystem::exists(report.artifacts.at("checkpoint_" + br.name)));
    CHECK(std::filesystem::exists(report.artifacts.at("history_" + br.name)));
    CHECK(br.history.epochs.size() == 2);
  }
  CHECK(report.branches[0].name == "branch1_tiny-cnn");
  CHECK(report.meta_history.epochs.size() == 3);

  const auto& m = report.ensemble;
  for (double v : {m.accuracy, m.precision, m.recall, m.f1}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(m.confusion.total() == 10);
  if (m.qwk) {
    CHECK(*m.qwk >= -1.0);
    CHECK(*m.qwk <= 1.0);
  }
  const auto doc = nlohmann::json::parse(slurp(report.artifacts.at("metrics_json")));
  CHECK(doc.at("accuracy").get<double>() == m.accuracy);

  SUBCASE("no leakage and labels follow their source") {
    const auto train = read_manifest_csv(report.artifacts.at("manifest_train"), SplitTag::Train);
    const auto resampled = read_manifest_csv(report.artifacts.at("manifest_train_resampled"), SplitTag::Train);
    const auto val = read_manifest_csv(report.artifacts.at("manifest_val"), SplitTag::Val);
    std::set<std::string> val_sources;
    for (const auto& r : val.records) val_sources.insert(r.source_id);
    std::map<std::string, int> train_grade;
    for (const auto& r : train.records) {
      CHECK(val_sources.count(r.source_id) == 0);
      train_grade[r.id] = r.grade;
    }
    for (const auto& r : resampled.records) {
      REQUIRE(train_grade.count(r.source_id) == 1);
      CHECK(train_grade.at(r.source_id) == r.grade);
    }
    for (const auto& [g, n] : class_histogram(resampled)) CHECK(n == 6);
  }

  SUBCASE("same seed gives identical artifacts") {
    const RunReport again = run_pipeline(tiny_config(b.path()));
    CHECK(slurp(again.artifacts.at("metrics_json")) == slurp(report.artifacts.at("metrics_json")));
    CHECK(slurp(again.artifacts.at("checkpoint_meta")) == slurp(report.artifacts.at("checkpoint_meta")));
  }

  SUBCASE("saved models reload") {
    PipelineConfig cfg = load_config(config_path(a.path()));
    cfg.output_dir = a.path();
    const auto branches = load_branches(cfg);
    CHECK(branches.size() == 2);
    CHECK_NOTHROW(load_meta(cfg));
  }
}

TEST_CASE("stage failures carry the stage name") {
  TempDir dir("stage");
  std::ofstream(dir.path() / "bad.csv") << "id_code,diagnosis\nmissing,2\n";
  PipelineConfig cfg = tiny_config(dir.path() / "out");
  cfg.source = DataSource::Aptos;
  cfg.data_csv = dir.path() / "bad.csv";
  cfg.image_dir = dir.path();
  try {
    run_pipeline(cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoValidRecords);
    CHECK(std::string(e.what()).rfind("NO_VALID_RECORDS: [prepare] ", 0) == 0);
  }
  PipelineConfig empty = tiny_config(dir.path() / "nothing");
  CHECK(error_code_of([&] { load_branches(empty); }) == ErrorCode::Io);
}

TEST_CASE("command line") {
  TempDir dir("cli");
  const auto data = dir.path() / "data";
  const auto out = dir.path() / "out";

  SUBCASE("synth writes images and a csv") {
    const auto r = cli({"synth", "--n", "10", "--size", "32", "--seed", "3", "--out", data.string()});
    REQUIRE(r.code == 0);
    std::size_t pngs = 0;
    for (const auto& e : std::filesystem::directory_iterator(data)) pngs += e.path().extension() == ".png";
    CHECK(pngs == 50);
    CHECK(std::filesystem::exists(data / "train.csv"));
  }
  SUBCASE("usage errors exit 2") {
    CHECK(cli({}).code == 2);
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(cli({"run", "--seed", "notanumber"}).code == 2);
    CHECK(cli({"run", "--set", "no.such.key=1", "--out", out.string()}).code == 2);
    CHECK(cli({"--help"}).code == 0);
  }
  SUBCASE("stage errors exit 1") {
    std::filesystem::create_directories(data);
    std::ofstream(data / "train.csv") << "id_code,diagnosis\nzz,1\n";
    const auto r = cli({"preprocess", "--data-csv", (data / "train.csv").string(), "--image-dir", data.string(),
                        "--out", out.string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("NO_VALID_RECORDS") != std::string::npos);
    CHECK(cli({"evaluate", "--set", "data.synthetic_n_per_class=2", "--out", (dir.path() / "none").string()}).code ==
          1);
  }
  SUBCASE("staged commands, run and predict") {
    const std::string conf = FUNDUS_SMOKE_CONFIG;
    const std::vector<std::string> quick = {"--config", conf, "--seed", "11", "--epochs-base", "1", "--epochs-meta",
                                            "2", "--resample-target", "20"};
    auto with = [&](std::string cmd, const std::filesystem::path& o) {
      std::vector<std::string> args{std::move(cmd)};
      args.insert(args.end(), quick.begin(), quick.end());
      args.push_back("--out");
      args.push_back(o.string());
      return cli(args);
    };
    const auto staged = out / "staged";
    for (const char* cmd : {"preprocess", "train-base", "train-meta", "evaluate"}) {
      const auto r = with(cmd, staged);
      INFO(cmd << ": " << r.err);
      REQUIRE(r.code == 0);
    }
    const auto r1 = with("run", out / "r1");
    const auto r2 = with("run", out / "r2");
    REQUIRE(r1.code == 0);
    REQUIRE(r2.code == 0);
    CHECK(r1.out == r2.out);
    CHECK(slurp(out / "r1" / "metrics.json") == slurp(out / "r2" / "metrics.json"));
    CHECK(slurp(staged / "metrics.json") == slurp(out / "r1" / "metrics.json"));

    std::filesystem::path png;
    for (const auto& e : std::filesystem::directory_iterator(staged / "synthetic"))
      if (e.path().extension() == ".png") png = e.path();
    REQUIRE_FALSE(png.empty());
    const auto p = cli({"predict", png.string(), "--model-dir", (out / "r1").string()});
    REQUIRE(p.code == 0);
    CHECK(std::regex_match(p.out, std::regex(R"(grade=[0-4] probs=([01]\.\d{6},){3}[01]\.\d{6}\n)")));
  }
}
