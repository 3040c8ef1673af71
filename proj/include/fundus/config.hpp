#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "fundus/model.hpp"
#include "fundus/preprocess.hpp"

namespace fundus {

enum class DataSource { Synthetic, Aptos };

struct PipelineConfig {
  DataSource source = DataSource::Synthetic;
  std::filesystem::path data_csv;
  std::filesystem::path image_dir;
  std::size_t synthetic_n_per_class = 20;
  int synthetic_size = 64;

  PreprocessConfig preprocess;
  bool cache_preprocessed = true;
  AugmentConfig augment;
  bool augment_enabled = true;

  std::size_t resample_target = 700;
  double split_fraction = 0.85;

  TrainConfig train_base = TrainConfig::base_defaults();
  TrainConfig train_meta = TrainConfig::meta_defaults();
  std::array<BackboneSpec, 2> backbones{make_backbone_spec("densenet121"), make_backbone_spec("inceptionv3")};
  BranchHeadSpec head;
  MetaModelSpec meta;
  // 0: meta features come from branches trained on the full training split.
  // >= 2: out-of-fold stacking with that many folds.
  int stacking_folds = 0;

  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;

  void validate() const;
};

// Flat "key = value" lines with dotted section keys; '#' starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string& text);

// Applies `values` on top of `cfg`. Unknown keys raise CONFIG_ERROR.
void apply_overrides(PipelineConfig& cfg, const std::map<std::string, std::string>& values);

PipelineConfig load_config(const std::filesystem::path& path);

// Canonical text form; load_config(to_text(c)) reproduces c.
std::string to_text(const PipelineConfig& cfg);

}  // namespace fundus
