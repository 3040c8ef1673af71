#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fundus/image.hpp"
#include "fundus/labels.hpp"
#include "fundus/metrics.hpp"
#include "fundus/nn.hpp"
#include "fundus/preprocess.hpp"
#include "fundus/shapecalc.hpp"

namespace fundus {

// ---------------------------------------------------------------------------
// Specs

struct BackboneSpec {
  std::string name = "tiny-cnn";
  bool pretrained = false;
  // Fraction of the backbone's parameterized layers, counted from the input, kept frozen.
  double frozen_fraction = 1.0;
  // Declared output for a 224x224x3 input, as registered.
  VolumeShape output_shape;
  // Optional weight blob for pretrained backbones.
  std::filesystem::path weights_path;
};

struct BackboneEntry {
  std::string name;
  std::vector<ChainLayer> layers;  // conv layers carry a fused ReLU
  VolumeShape output_at_224;
};

const BackboneEntry& lookup_backbone(const std::string& name);
std::vector<std::string> registered_backbones();
BackboneSpec make_backbone_spec(const std::string& name, double frozen_fraction = 1.0);

struct BranchHeadSpec {
  int dense_width = 256;
  double dropout_rate = 0.5;
  int output_units = kOrdinalBits;
};

enum class MetaStep { DenseRelu, Dropout, Sigmoid };

// dense-relu x2, dropout, dense-relu x2, dropout, dense-relu x3, sigmoid output.
std::vector<MetaStep> canonical_meta_plan();

struct MetaModelSpec {
  std::vector<MetaStep> layer_plan = canonical_meta_plan();
  std::vector<int> widths{64, 64, 32, 32, 16, 8, 4};
  double dropout_rate = 0.5;
};

struct TrainConfig {
  std::string loss = "binary_crossentropy";
  std::string optimizer = "adam";
  double learning_rate = 5e-5;
  int batch_size = 32;
  double l2_on_dense = 1e-3;
  double dropout = 0.5;
  int epochs = 15;
  std::uint64_t seed = 0;

  static TrainConfig base_defaults() { return {}; }
  static TrainConfig meta_defaults();
  void validate() const;
};

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kBceEpsilon = 1e-7;

// Mean over the four positions of -[t log p + (1-t) log(1-p)], p clipped to [eps, 1-eps].
double bce_loss(const OrdinalVector& pred, const OrdinalVector& target);

// d bce_loss / d pred; zero where the clip is active.
OrdinalVector bce_gradient(const OrdinalVector& pred, const OrdinalVector& target);

// ---------------------------------------------------------------------------
// Data handed to the training loops

// Preprocessed images with ordinal targets. Replicas share pixel storage.
struct ImageDataset {
  std::vector<std::shared_ptr<const ImageGrid>> images;
  std::vector<Grade> grades;
  std::vector<std::string> ids;

  std::size_t size() const noexcept { return grades.size(); }
};

using StackedFeatures = std::array<double, 2 * kOrdinalBits>;

struct StackedDataset {
  std::vector<StackedFeatures> features;
  std::vector<Grade> grades;

  std::size_t size() const noexcept { return grades.size(); }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double val_qwk = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  // 1-based epoch whose weights were kept; 0 when nothing was trained.
  int best_epoch = 0;

  double best_qwk() const;
};

// ---------------------------------------------------------------------------
// Models

class BranchModel {
 public:
  const BackboneSpec& backbone() const noexcept { return backbone_; }
  const BranchHeadSpec& head() const noexcept { return head_; }
  const VolumeShape& input_shape() const noexcept { return input_; }
  std::size_t backbone_layer_count() const noexcept { return backbone_layers_; }
  std::size_t frozen_backbone_layers() const noexcept { return frozen_layers_; }
  // Expected shapes after each head layer (pool, flatten, dense, dense), from shapecalc.
  const std::vector<VolumeShape>& head_shapes() const noexcept { return head_shapes_; }

  nn::Sequential& net() noexcept { return net_; }
  const nn::Sequential& net() const noexcept { return net_; }

  nn::Tensor apply(const nn::Tensor& batch) const { return net_.apply(batch); }
  std::vector<OrdinalVector> predict(std::span<const ImageGrid> images) const;
  OrdinalVector predict(const ImageGrid& image) const;

  std::string fingerprint() const;

 private:
  friend BranchModel build_branch(const BackboneSpec&, const BranchHeadSpec&, const VolumeShape&,
                                  double, std::uint64_t);

  BackboneSpec backbone_;
  BranchHeadSpec head_;
  VolumeShape input_;
  std::size_t backbone_layers_ = 0;
  std::size_t frozen_layers_ = 0;
  std::vector<VolumeShape> head_shapes_;
  nn::Sequential net_;
};

// `input` is (width, height, 3); the registered 224 output shape is enforced for 224 inputs.
BranchModel build_branch(const BackboneSpec& backbone, const BranchHeadSpec& head,
                         const VolumeShape& input, double l2_on_dense, std::uint64_t seed);

class MetaModel {
 public:
  const MetaModelSpec& spec() const noexcept { return spec_; }
  nn::Sequential& net() noexcept { return net_; }
  const nn::Sequential& net() const noexcept { return net_; }

  nn::Tensor apply(const nn::Tensor& batch) const { return net_.apply(batch); }
  std::vector<OrdinalVector> predict(std::span<const StackedFeatures> features) const;
  OrdinalVector predict(const StackedFeatures& features) const;

  std::string fingerprint() const;

 private:
  friend MetaModel build_meta(const MetaModelSpec&, double, std::uint64_t);

  MetaModelSpec spec_;
  nn::Sequential net_;
};

MetaModel build_meta(const MetaModelSpec& spec, double l2_on_dense, std::uint64_t seed);

// Closed-form parameter count of the meta network for `spec`.
std::size_t meta_parameter_count(const MetaModelSpec& spec);

StackedFeatures stack_features(const OrdinalVector& first, const OrdinalVector& second);

// Augmentation is applied to training images only; pass nullopt to disable it.
TrainingHistory train_branch(BranchModel& model, const ImageDataset& train, const ImageDataset& val,
                             const TrainConfig& cfg, const std::optional<AugmentConfig>& augment);

TrainingHistory train_meta(MetaModel& meta, const StackedDataset& train, const StackedDataset& val,
                           const TrainConfig& cfg);

// Branch probabilities for every image in `data`, stacked in branch order.
StackedDataset stacked_features(std::span<const BranchModel> branches, const ImageDataset& data);

struct Prediction {
  Grade grade;
  OrdinalVector probs{};
};

// `image` must already be preprocessed to the branches' input size with 3 channels.
Prediction predict(std::span<const BranchModel> branches, const MetaModel& meta, const ImageGrid& image);
std::vector<Prediction> predict(std::span<const BranchModel> branches, const MetaModel& meta,
                                std::span<const ImageGrid> images);

// NHWC batch from images.
nn::Tensor to_batch(std::span<const ImageGrid* const> images);

// ---------------------------------------------------------------------------
// Checkpoints: <stem>.weights (binary) + <stem>.meta (text sidecar)

struct Checkpoint {
  std::vector<double> weights;
  std::string spec_fingerprint;
  int epoch = 0;
  TrainingHistory history;
  std::optional<MetricsReport> metrics_snapshot;
};

void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt);
// Throws CHECKPOINT_MISMATCH when the stored fingerprint differs from `expected_fingerprint`.
Checkpoint load_checkpoint(const std::filesystem::path& stem, const std::string& expected_fingerprint);

std::string history_csv(const TrainingHistory& history);
std::string curves_csv(const TrainingHistory& history);

std::string fnv1a_hex(std::string_view text);

}  // namespace fundus
