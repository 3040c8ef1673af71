#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fundus/config.hpp"
#include "fundus/manifest.hpp"
#include "fundus/metrics.hpp"
#include "fundus/model.hpp"

namespace fundus {

// Split, resampled and preprocessed data shared by the training/evaluation stages.
struct PreparedData {
  DatasetManifest full;
  DatasetManifest train;            // before resampling
  DatasetManifest train_resampled;  // what the branches see
  DatasetManifest val;
  ImageDataset train_images;  // follows train_resampled
  ImageDataset val_images;
};

struct BranchResult {
  std::string name;  // "branch1_densenet121"
  TrainingHistory history;
  MetricsReport val_metrics;
};

struct RunReport {
  MetricsReport ensemble;
  std::vector<BranchResult> branches;
  TrainingHistory meta_history;
  // Logical artifact name -> file written under output_dir.
  std::map<std::string, std::filesystem::path> artifacts;
};

// Loads (or generates) the dataset, splits, resamples the training split and preprocesses
// every distinct image. Writes manifests/*.csv under output_dir.
PreparedData prepare_data(const PipelineConfig& cfg);

std::vector<BranchModel> build_branches(const PipelineConfig& cfg);
MetaModel build_meta_model(const PipelineConfig& cfg);

// Trains both branches and writes their checkpoints, history and curves.
std::vector<BranchResult> train_base_stage(const PipelineConfig& cfg, const PreparedData& data,
                                           std::vector<BranchModel>& branches, RunReport& report);

// Meta features (optionally out-of-fold), meta training, checkpoint, history and curves.
TrainingHistory train_meta_stage(const PipelineConfig& cfg, const PreparedData& data,
                                 const std::vector<BranchModel>& branches, MetaModel& meta, RunReport& report);

// Scores the ensemble and each branch on the validation split; writes metrics artifacts.
void evaluate_stage(const PipelineConfig& cfg, const PreparedData& data, const std::vector<BranchModel>& branches,
                    const MetaModel& meta, RunReport& report);

// Restores trained models from output_dir/checkpoints.
std::vector<BranchModel> load_branches(const PipelineConfig& cfg);
MetaModel load_meta(const PipelineConfig& cfg);

// Full flow: prepare -> base training -> stacking -> evaluation.
RunReport run_pipeline(const PipelineConfig& cfg);

std::string branch_name(const PipelineConfig& cfg, std::size_t index);

// Effective configuration persisted next to the checkpoints.
std::filesystem::path config_path(const std::filesystem::path& output_dir);

}  // namespace fundus
