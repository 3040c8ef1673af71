#include "fundus/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <spdlog/spdlog.h>

#include "fundus/dataset.hpp"
#include "fundus/error.hpp"
#include "fundus/image_io.hpp"
#include "fundus/labels.hpp"
#include "fundus/preprocess.hpp"
#include "fundus/random.hpp"

namespace fundus {

namespace fs = std::filesystem;

namespace {

// Sub-stream ids for derive_seed(cfg.seed, ...).
enum SeedStream : std::uint64_t {
  kSplitSeed = 1,
  kResampleSeed = 2,
  kBranchTrainSeed = 10,
  kMetaTrainSeed = 20,
  kBranchInitSeed = 30,
  kMetaInitSeed = 40,
  kFoldSeed = 50,
  kSyntheticSeed = 100,
};

template <class F>
decltype(auto) in_stage(const char* stage, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    const std::string what = e.what();
    const std::string prefix = std::string(to_string(e.code())) + ": ";
    const std::string detail = what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
    throw Error(e.code(), std::string("[") + stage + "] " + detail);
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

std::string preprocess_key(const PreprocessConfig& p) {
  std::ostringstream s;
  s.precision(17);
  s << p.dark_threshold << '|' << p.target_size << '|' << p.circle_margin << '|' << p.kernel.sigma_x << '|'
    << p.kernel.sigma_y << '|' << p.kernel.half_size;
  return s.str();
}

std::shared_ptr<const ImageGrid> load_preprocessed(const SampleRecord& rec, const PipelineConfig& cfg) {
  const fs::path cache = cfg.output_dir / "cache" /
                         (rec.source_id + "_" + fnv1a_hex(rec.image_path.string() + "|" + preprocess_key(cfg.preprocess)) + ".bin");
  if (cfg.cache_preprocessed && fs::exists(cache)) {
    std::ifstream in(cache, std::ios::binary);
    int dims[3] = {0, 0, 0};
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    std::vector<float> values(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (in) return std::make_shared<const ImageGrid>(ImageGrid::from_values(dims[0], dims[1], dims[2], std::move(values)));
    spdlog::warn("ignoring unreadable cache entry {}", cache.string());
  }
  auto img = std::make_shared<const ImageGrid>(preprocess_image(read_image(rec.image_path), cfg.preprocess));
  if (cfg.cache_preprocessed) {
    fs::create_directories(cache.parent_path());
    std::ofstream out(cache, std::ios::binary);
    const int dims[3] = {img->height(), img->width(), img->channels()};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    out.write(reinterpret_cast<const char*>(img->values().data()),
              static_cast<std::streamsize>(img->values().size() * sizeof(float)));
  }
  return img;
}

ImageDataset to_image_dataset(const DatasetManifest& manifest,
                              std::map<std::string, std::shared_ptr<const ImageGrid>>& pool,
                              const PipelineConfig& cfg) {
  ImageDataset ds;
  for (const auto& rec : manifest.records) {
    const std::string& key = rec.source_id.empty() ? rec.id : rec.source_id;
    auto it = pool.find(key);
    if (it == pool.end()) it = pool.emplace(key, load_preprocessed(rec, cfg)).first;
    ds.images.push_back(it->second);
    ds.grades.push_back(Grade(rec.grade));
    ds.ids.push_back(rec.id);
  }
  return ds;
}

ImageDataset subset(const ImageDataset& ds, const std::vector<std::size_t>& idx) {
  ImageDataset out;
  for (std::size_t i : idx) {
    out.images.push_back(ds.images[i]);
    out.grades.push_back(ds.grades[i]);
    out.ids.push_back(ds.ids[i]);
  }
  return out;
}

TrainConfig branch_train_config(const PipelineConfig& cfg, std::size_t i) {
  TrainConfig t = cfg.train_base;
  t.seed = derive_seed(cfg.seed, kBranchTrainSeed + i);
  return t;
}

std::vector<Grade> decoded(const std::vector<OrdinalVector>& probs) {
  std::vector<Grade> out;
  for (const auto& p : probs) out.push_back(decode(p, 0.5));
  return out;
}

void record(RunReport& report, const std::string& name, const fs::path& path) { report.artifacts[name] = path; }

void save_history(const PipelineConfig& cfg, const std::string& name, const TrainingHistory& history,
                  RunReport& report) {
  const fs::path hist = cfg.output_dir / ("history_" + name + ".csv");
  const fs::path curves = cfg.output_dir / ("curves_" + name + ".csv");
  write_text(hist, history_csv(history));
  write_text(curves, curves_csv(history));
  record(report, "history_" + name, hist);
  record(report, "curves_" + name, curves);
}

StackedDataset out_of_fold_features(const PipelineConfig& cfg, const PreparedData& data) {
  // Folds are assigned per source image so replicas never straddle train and held-out.
  const ImageDataset& train = data.train_images;
  std::vector<std::string> sources;
  std::map<std::string, std::size_t> fold_of;
  for (const auto& rec : data.train_resampled.records) {
    if (!fold_of.contains(rec.source_id)) {
      fold_of[rec.source_id] = 0;
      sources.push_back(rec.source_id);
    }
  }
  Rng rng(derive_seed(cfg.seed, kFoldSeed));
  std::shuffle(sources.begin(), sources.end(), rng);
  const auto folds = static_cast<std::size_t>(cfg.stacking_folds);
  for (std::size_t i = 0; i < sources.size(); ++i) fold_of[sources[i]] = i % folds;

  StackedDataset out;
  out.grades = train.grades;
  out.features.resize(train.size());
  for (std::size_t k = 0; k < folds; ++k) {
    std::vector<std::size_t> fit_idx, held_idx;
    for (std::size_t i = 0; i < train.size(); ++i) {
      (fold_of[data.train_resampled.records[i].source_id] == k ? held_idx : fit_idx).push_back(i);
    }
    if (held_idx.empty() || fit_idx.empty()) continue;
    auto fold_branches = build_branches(cfg);
    for (std::size_t b = 0; b < fold_branches.size(); ++b) {
      TrainConfig t = branch_train_config(cfg, b);
      t.seed = derive_seed(t.seed, k + 1);
      spdlog::info("out-of-fold {}/{}: training {}", k + 1, folds, branch_name(cfg, b));
      train_branch(fold_branches[b], subset(train, fit_idx), data.val_images, t,
                   cfg.augment_enabled ? std::optional(cfg.augment) : std::nullopt);
    }
    const StackedDataset held = stacked_features(fold_branches, subset(train, held_idx));
    for (std::size_t j = 0; j < held_idx.size(); ++j) out.features[held_idx[j]] = held.features[j];
  }
  return out;
}

}  // namespace

std::string branch_name(const PipelineConfig& cfg, std::size_t index) {
  return "branch" + std::to_string(index + 1) + "_" + cfg.backbones.at(index).name;
}

fs::path config_path(const fs::path& output_dir) { return output_dir / "config.txt"; }

PreparedData prepare_data(const PipelineConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  write_text(config_path(cfg.output_dir), to_text(cfg));

  PreparedData data;
  if (cfg.source == DataSource::Synthetic) {
    data.full = generate_synthetic(cfg.synthetic_n_per_class, cfg.synthetic_size,
                                   derive_seed(cfg.seed, kSyntheticSeed), cfg.output_dir / "synthetic");
  } else {
    IngestReport ingest = ingest_aptos(cfg.data_csv, cfg.image_dir);
    std::string rejects;
    for (const auto& r : ingest.rejects) rejects += r + "\n";
    rejects += "missing_images: " + std::to_string(ingest.missing_images) + "\n";
    write_text(cfg.output_dir / "manifests" / "rejects.txt", rejects);
    data.full = std::move(ingest.manifest);
  }

  std::tie(data.train, data.val) = split(data.full, cfg.split_fraction, derive_seed(cfg.seed, kSplitSeed));
  const ResamplePlan plan =
      build_resample_plan(class_histogram(data.train), cfg.resample_target, derive_seed(cfg.seed, kResampleSeed));
  data.train_resampled = apply_resample_plan(plan, data.train);

  write_manifest_csv(data.full, cfg.output_dir / "manifests" / "all.csv");
  write_manifest_csv(data.train, cfg.output_dir / "manifests" / "train.csv");
  write_manifest_csv(data.train_resampled, cfg.output_dir / "manifests" / "train_resampled.csv");
  write_manifest_csv(data.val, cfg.output_dir / "manifests" / "val.csv");

  std::map<std::string, std::shared_ptr<const ImageGrid>> pool;
  data.train_images = to_image_dataset(data.train_resampled, pool, cfg);
  data.val_images = to_image_dataset(data.val, pool, cfg);
  spdlog::info("prepared {} train ({} resampled) / {} val records, {} distinct images", data.train.size(),
               data.train_resampled.size(), data.val.size(), pool.size());
  return data;
}

std::vector<BranchModel> build_branches(const PipelineConfig& cfg) {
  const VolumeShape input{cfg.preprocess.target_size, cfg.preprocess.target_size, 3};
  std::vector<BranchModel> branches;
  for (std::size_t i = 0; i < cfg.backbones.size(); ++i) {
    branches.push_back(build_branch(cfg.backbones[i], cfg.head, input, cfg.train_base.l2_on_dense,
                                    derive_seed(cfg.seed, kBranchInitSeed + i)));
  }
  return branches;
}

MetaModel build_meta_model(const PipelineConfig& cfg) {
  return build_meta(cfg.meta, cfg.train_meta.l2_on_dense, derive_seed(cfg.seed, kMetaInitSeed));
}

std::vector<BranchResult> train_base_stage(const PipelineConfig& cfg, const PreparedData& data,
                                           std::vector<BranchModel>& branches, RunReport& report) {
  std::vector<BranchResult> results;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    BranchResult r;
    r.name = branch_name(cfg, i);
    spdlog::info("training {}", r.name);
    r.history = train_branch(branches[i], data.train_images, data.val_images, branch_train_config(cfg, i),
                             cfg.augment_enabled ? std::optional(cfg.augment) : std::nullopt);

    std::vector<OrdinalVector> probs;
    for (const auto& img : data.val_images.images) probs.push_back(branches[i].predict(*img));
    r.val_metrics = evaluate_grades(data.val_images.grades, decoded(probs));

    const fs::path stem = cfg.output_dir / "checkpoints" / r.name;
    save_checkpoint(stem, Checkpoint{branches[i].net().snapshot(), branches[i].fingerprint(), r.history.best_epoch,
                                     r.history, r.val_metrics});
    record(report, "checkpoint_" + r.name, fs::path(stem.string() + ".weights"));
    save_history(cfg, r.name, r.history, report);
    results.push_back(r);
  }
  report.branches = results;
  return results;
}

TrainingHistory train_meta_stage(const PipelineConfig& cfg, const PreparedData& data,
                                 const std::vector<BranchModel>& branches, MetaModel& meta, RunReport& report) {
  const StackedDataset train =
      cfg.stacking_folds >= 2 ? out_of_fold_features(cfg, data) : stacked_features(branches, data.train_images);
  const StackedDataset val = stacked_features(branches, data.val_images);

  TrainConfig t = cfg.train_meta;
  t.seed = derive_seed(cfg.seed, kMetaTrainSeed);
  spdlog::info("training meta model on {} stacked samples", train.size());
  TrainingHistory history = train_meta(meta, train, val, t);

  const fs::path stem = cfg.output_dir / "checkpoints" / "meta";
  save_checkpoint(stem, Checkpoint{meta.net().snapshot(), meta.fingerprint(), history.best_epoch, history, std::nullopt});
  record(report, "checkpoint_meta", fs::path(stem.string() + ".weights"));
  save_history(cfg, "meta", history, report);
  report.meta_history = history;
  return history;
}

void evaluate_stage(const PipelineConfig& cfg, const PreparedData& data, const std::vector<BranchModel>& branches,
                    const MetaModel& meta, RunReport& report) {
  const StackedDataset val = stacked_features(branches, data.val_images);
  report.ensemble = evaluate_grades(val.grades, decoded(meta.predict(val.features)));

  const fs::path json = cfg.output_dir / "metrics.json";
  const fs::path text = cfg.output_dir / "metrics.txt";
  const fs::path grid = cfg.output_dir / "confusion.txt";
  write_text(json, format_report_json(report.ensemble));
  write_text(text, format_report_text(report.ensemble));
  write_text(grid, format_confusion_grid(report.ensemble.confusion));
  record(report, "metrics_json", json);
  record(report, "metrics_text", text);
  record(report, "confusion", grid);

  report.branches.resize(branches.size());
  for (std::size_t i = 0; i < branches.size(); ++i) {
    std::vector<OrdinalVector> probs;
    for (const auto& f : val.features) probs.push_back(OrdinalVector{f[4 * i], f[4 * i + 1], f[4 * i + 2], f[4 * i + 3]});
    BranchResult& r = report.branches[i];
    r.name = branch_name(cfg, i);
    r.val_metrics = evaluate_grades(val.grades, decoded(probs));
    const fs::path path = cfg.output_dir / ("metrics_" + r.name + ".json");
    write_text(path, format_report_json(r.val_metrics));
    record(report, "metrics_" + r.name, path);
  }

  for (const char* m : {"all", "train", "train_resampled", "val"}) {
    record(report, std::string("manifest_") + m, cfg.output_dir / "manifests" / (std::string(m) + ".csv"));
  }
  record(report, "config", config_path(cfg.output_dir));

  const fs::path summary = cfg.output_dir / "report.txt";
  record(report, "report", summary);
  std::ostringstream s;
  s << "ensemble " << format_report_text(report.ensemble);
  for (const auto& b : report.branches) {
    s << b.name << " accuracy: " << b.val_metrics.accuracy << " qwk: " << b.val_metrics.qwk.value_or(0.0) << '\n';
  }
  s << "[artifacts]\n";
  for (const auto& [name, path] : report.artifacts) s << name << " = " << path.string() << '\n';
  write_text(summary, s.str());
}

std::vector<BranchModel> load_branches(const PipelineConfig& cfg) {
  auto branches = build_branches(cfg);
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const Checkpoint ckpt =
        load_checkpoint(cfg.output_dir / "checkpoints" / branch_name(cfg, i), branches[i].fingerprint());
    branches[i].net().restore(ckpt.weights);
  }
  return branches;
}

MetaModel load_meta(const PipelineConfig& cfg) {
  MetaModel meta = build_meta_model(cfg);
  const Checkpoint ckpt = load_checkpoint(cfg.output_dir / "checkpoints" / "meta", meta.fingerprint());
  meta.net().restore(ckpt.weights);
  return meta;
}

RunReport run_pipeline(const PipelineConfig& cfg) {
  RunReport report;
  const PreparedData data = in_stage("prepare", [&] { return prepare_data(cfg); });
  auto branches = in_stage("build", [&] { return build_branches(cfg); });
  in_stage("train-base", [&] { train_base_stage(cfg, data, branches, report); });
  MetaModel meta = in_stage("build-meta", [&] { return build_meta_model(cfg); });
  in_stage("train-meta", [&] { train_meta_stage(cfg, data, branches, meta, report); });
  in_stage("evaluate", [&] { evaluate_stage(cfg, data, branches, meta, report); });
  return report;
}

}  // namespace fundus
