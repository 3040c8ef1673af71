#include "fundus/cli.hpp"

#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "fundus/config.hpp"
#include "fundus/dataset.hpp"
#include "fundus/error.hpp"
#include "fundus/image_io.hpp"
#include "fundus/pipeline.hpp"

namespace fundus {

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string data_csv;
  std::string image_dir;
  std::string out;
  std::string backbones;
  std::optional<int> epochs_base;
  std::optional<int> epochs_meta;
  std::optional<std::size_t> resample_target;
  bool no_augment = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "key = value configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", f.seed, "master seed");
  app->add_option("--data-csv", f.data_csv, "APTOS-style CSV (id_code,diagnosis); selects the aptos source");
  app->add_option("--image-dir", f.image_dir, "directory holding <id_code>.png|.jpg");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--backbones", f.backbones, "two registered backbones, e.g. densenet121,inceptionv3");
  app->add_option("--epochs-base", f.epochs_base, "branch training epochs");
  app->add_option("--epochs-meta", f.epochs_meta, "meta-model training epochs");
  app->add_option("--resample-target", f.resample_target, "per-class sample count after resampling");
  app->add_flag("--no-augment", f.no_augment, "disable training-time augmentation");
  app->add_option("--set", f.sets, "extra key=value override (repeatable)");
}

// Precedence: defaults < --config file < --set < dedicated flags.
PipelineConfig resolve(const CommonFlags& f) {
  PipelineConfig cfg = f.config.empty() ? PipelineConfig{} : load_config(f.config);
  std::map<std::string, std::string> kv;
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::Config, "--set expects key=value, got '" + s + "'");
    const auto parsed = parse_key_values(s);
    kv.insert(parsed.begin(), parsed.end());
  }
  if (f.seed) kv["seed"] = std::to_string(*f.seed);
  if (!f.data_csv.empty()) {
    kv["data.source"] = "aptos";
    kv["data.csv"] = f.data_csv;
  }
  if (!f.image_dir.empty()) kv["data.image_dir"] = f.image_dir;
  if (!f.out.empty()) kv["output_dir"] = f.out;
  if (!f.backbones.empty()) kv["backbones"] = f.backbones;
  if (f.epochs_base) kv["train_base.epochs"] = std::to_string(*f.epochs_base);
  if (f.epochs_meta) kv["train_meta.epochs"] = std::to_string(*f.epochs_meta);
  if (f.resample_target) kv["resample_target"] = std::to_string(*f.resample_target);
  if (f.no_augment) kv["augment.enabled"] = "false";
  apply_overrides(cfg, kv);
  cfg.validate();
  return cfg;
}

void print_branches(std::ostream& out, const std::vector<BranchResult>& branches) {
  for (const auto& b : branches) {
    out << b.name << ": accuracy=" << b.val_metrics.accuracy << " qwk=" << b.val_metrics.qwk.value_or(0.0)
        << " best_epoch=" << b.history.best_epoch << '\n';
  }
}

std::string format_prediction(const Prediction& p) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "grade=%d probs=%.6f,%.6f,%.6f,%.6f", p.grade.value(), p.probs[0], p.probs[1],
                p.probs[2], p.probs[3]);
  return buf;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diabetic retinopathy grading: preprocessing, two-branch training and stacked ensemble"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  CommonFlags flags;
  auto* preprocess_cmd = app.add_subcommand("preprocess", "ingest, split, resample and cache preprocessed images");
  auto* train_base_cmd = app.add_subcommand("train-base", "train both branch models");
  auto* train_meta_cmd = app.add_subcommand("train-meta", "train the stacking meta-model from saved branches");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score saved models on the validation split");
  auto* run_cmd = app.add_subcommand("run", "full flow: preprocess, branches, meta-model, evaluation");
  for (auto* sub : {preprocess_cmd, train_base_cmd, train_meta_cmd, evaluate_cmd, run_cmd}) add_common(sub, flags);

  std::size_t synth_n = 20;
  int synth_size = 64;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic graded dataset (images + train.csv)");
  synth_cmd->add_option("--n", synth_n, "images per grade")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", synth_size, "image side in pixels")->check(CLI::Range(16, 4096));
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();

  std::string predict_image;
  std::string model_dir;
  auto* predict_cmd = app.add_subcommand("predict", "grade one image with trained models");
  predict_cmd->add_option("image", predict_image, "fundus image (PNG/JPEG)")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--model-dir", model_dir, "output directory of a previous run")
      ->required()
      ->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (synth_cmd->parsed()) {
      const auto m = generate_synthetic(synth_n, synth_size, synth_seed, synth_out);
      out << "wrote " << m.size() << " images and train.csv to " << synth_out << '\n';
    } else if (predict_cmd->parsed()) {
      PipelineConfig cfg = load_config(config_path(model_dir));
      cfg.output_dir = model_dir;
      const auto branches = load_branches(cfg);
      const MetaModel meta = load_meta(cfg);
      const ImageGrid img = preprocess_image(read_image(predict_image), cfg.preprocess);
      out << format_prediction(predict(branches, meta, img)) << '\n';
    } else {
      const PipelineConfig cfg = resolve(flags);
      if (run_cmd->parsed()) {
        const RunReport report = run_pipeline(cfg);
        print_branches(out, report.branches);
        out << format_report_text(report.ensemble);
      } else {
        const PreparedData data = prepare_data(cfg);
        RunReport report;
        if (preprocess_cmd->parsed()) {
          out << "records: " << data.full.size() << " train: " << data.train.size()
              << " train_resampled: " << data.train_resampled.size() << " val: " << data.val.size() << '\n';
        } else if (train_base_cmd->parsed()) {
          auto branches = build_branches(cfg);
          print_branches(out, train_base_stage(cfg, data, branches, report));
        } else if (train_meta_cmd->parsed()) {
          const auto branches = load_branches(cfg);
          MetaModel meta = build_meta_model(cfg);
          const auto history = train_meta_stage(cfg, data, branches, meta, report);
          out << "meta: best_epoch=" << history.best_epoch << " val_qwk=" << history.best_qwk() << '\n';
        } else if (evaluate_cmd->parsed()) {
          const auto branches = load_branches(cfg);
          const MetaModel meta = load_meta(cfg);
          evaluate_stage(cfg, data, branches, meta, report);
          print_branches(out, report.branches);
          out << format_report_text(report.ensemble);
        }
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::Config ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace fundus
