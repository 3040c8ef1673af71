#include "fundus/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <spdlog/spdlog.h>

#include "fundus/error.hpp"

namespace fundus {

namespace {

std::string shape_text(const VolumeShape& s) {
  return std::to_string(s.width) + "x" + std::to_string(s.height) + "x" + std::to_string(s.depth);
}

const std::map<std::string, BackboneEntry>& registry() {
  // The named ImageNet architectures are stood in for by compact conv stacks
  // whose 224x224 output volumes match the real networks' final feature maps.
  static const std::map<std::string, BackboneEntry> entries = [] {
    std::map<std::string, BackboneEntry> m;
    m["tiny-cnn"] = BackboneEntry{
        "tiny-cnn",
        {ConvSpec{3, 8, 1, 1}, PoolSpec{2, 2}, ConvSpec{3, 16, 1, 1}, PoolSpec{2, 2},
         ConvSpec{3, 32, 1, 1}, PoolSpec{2, 2}},
        VolumeShape{28, 28, 32}};
    m["densenet121"] = BackboneEntry{
        "densenet121",
        {ConvSpec{7, 16, 3, 2}, PoolSpec{2, 2}, ConvSpec{3, 32, 1, 2}, PoolSpec{2, 2}, PoolSpec{2, 2},
         ConvSpec{1, 1024, 0, 1}},
        VolumeShape{7, 7, 1024}};
    m["inceptionv3"] = BackboneEntry{
        "inceptionv3",
        {ConvSpec{3, 16, 0, 2}, PoolSpec{3, 2}, ConvSpec{3, 32, 0, 2}, PoolSpec{3, 2},
         ConvSpec{3, 64, 0, 2}, ConvSpec{2, 2048, 0, 1}},
        VolumeShape{5, 5, 2048}};
    return m;
  }();
  return entries;
}

std::vector<OrdinalVector> run_images(const nn::Sequential& net, const VolumeShape& input,
                                      std::span<const ImageGrid* const> images) {
  constexpr std::size_t kChunk = 32;
  std::vector<OrdinalVector> out;
  out.reserve(images.size());
  for (const ImageGrid* img : images) {
    if (img->height() != input.height || img->width() != input.width || img->channels() != input.depth) {
      throw Error(ErrorCode::UnpreprocessedInput,
                  "expected " + std::to_string(input.height) + "x" + std::to_string(input.width) + "x" +
                      std::to_string(input.depth) + ", got " + std::to_string(img->height()) + "x" +
                      std::to_string(img->width()) + "x" + std::to_string(img->channels()));
    }
  }
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    const nn::Tensor probs = net.apply(to_batch(chunk));
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      OrdinalVector v{};
      for (int j = 0; j < kOrdinalBits; ++j) v[j] = probs.data[b * kOrdinalBits + j];
      out.push_back(v);
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Registry

const BackboneEntry& lookup_backbone(const std::string& name) {
  const auto it = registry().find(name);
  if (it == registry().end()) throw Error(ErrorCode::UnknownBackbone, "'" + name + "'");
  return it->second;
}

std::vector<std::string> registered_backbones() {
  std::vector<std::string> names;
  for (const auto& [name, entry] : registry()) names.push_back(name);
  return names;
}

BackboneSpec make_backbone_spec(const std::string& name, double frozen_fraction) {
  const auto& entry = lookup_backbone(name);
  BackboneSpec spec;
  spec.name = name;
  spec.pretrained = name != "tiny-cnn";
  spec.frozen_fraction = frozen_fraction;
  spec.output_shape = entry.output_at_224;
  return spec;
}

std::vector<MetaStep> canonical_meta_plan() {
  using enum MetaStep;
  return {DenseRelu, DenseRelu, Dropout, DenseRelu, DenseRelu, Dropout,
          DenseRelu, DenseRelu, DenseRelu, Sigmoid};
}

TrainConfig TrainConfig::meta_defaults() {
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.epochs = 200;
  return cfg;
}

void TrainConfig::validate() const {
  if (loss != "binary_crossentropy") throw Error(ErrorCode::Config, "unsupported loss '" + loss + "'");
  if (optimizer != "adam") throw Error(ErrorCode::Config, "unsupported optimizer '" + optimizer + "'");
  if (!(learning_rate > 0.0) || batch_size < 1 || l2_on_dense < 0.0 || epochs < 0 ||
      dropout < 0.0 || dropout >= 1.0) {
    throw Error(ErrorCode::Config, "train config out of range");
  }
}

// ---------------------------------------------------------------------------
// Loss

double bce_loss(const OrdinalVector& pred, const OrdinalVector& target) {
  double sum = 0.0;
  for (int i = 0; i < kOrdinalBits; ++i) {
    const double p = std::clamp(pred[i], kBceEpsilon, 1.0 - kBceEpsilon);
    sum -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
  }
  return sum / kOrdinalBits;
}

OrdinalVector bce_gradient(const OrdinalVector& pred, const OrdinalVector& target) {
  OrdinalVector g{};
  for (int i = 0; i < kOrdinalBits; ++i) {
    const double p = pred[i];
    if (p <= kBceEpsilon || p >= 1.0 - kBceEpsilon) continue;
    g[i] = (-target[i] / p + (1.0 - target[i]) / (1.0 - p)) / kOrdinalBits;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Branch

BranchModel build_branch(const BackboneSpec& backbone, const BranchHeadSpec& head,
                         const VolumeShape& input, double l2_on_dense, std::uint64_t seed) {
  const BackboneEntry& entry = lookup_backbone(backbone.name);
  if (head.output_units != kOrdinalBits) {
    throw Error(ErrorCode::ShapeMismatch, "head must emit " + std::to_string(kOrdinalBits) + " units");
  }
  if (head.dense_width < 1 || head.dropout_rate < 0.0 || head.dropout_rate >= 1.0) {
    throw Error(ErrorCode::InvalidArgument, "head needs dense_width >= 1 and dropout in [0,1)");
  }
  if (backbone.frozen_fraction < 0.0 || backbone.frozen_fraction > 1.0) {
    throw Error(ErrorCode::InvalidArgument, "frozen_fraction must lie in [0,1]");
  }
  if (input.depth != 3) throw Error(ErrorCode::ShapeMismatch, "branch input must have 3 channels");

  std::vector<VolumeShape> trunk;
  try {
    trunk = validate_chain(input, entry.layers);
  } catch (const Error& e) {
    throw Error(ErrorCode::ShapeMismatch, backbone.name + " on " + shape_text(input) + ": " + e.what());
  }
  const VolumeShape features = trunk.back();
  if (input.width == 224 && input.height == 224) {
    const VolumeShape declared = backbone.output_shape.volume() > 1 ? backbone.output_shape : entry.output_at_224;
    if (features != entry.output_at_224 || declared != entry.output_at_224) {
      throw Error(ErrorCode::ShapeMismatch, backbone.name + " yields " + shape_text(features) +
                                                " but declares " + shape_text(declared));
    }
  }
  if (features.width != features.height) {
    throw Error(ErrorCode::ShapeMismatch, "global pooling needs a square feature map");
  }

  BranchModel model;
  model.backbone_ = backbone;
  if (model.backbone_.output_shape.volume() <= 1) model.backbone_.output_shape = entry.output_at_224;
  model.head_ = head;
  model.input_ = input;
  model.head_shapes_ = validate_chain(
      features, {PoolSpec{features.width, 1}, FlattenMarker{}, DenseWidth{head.dense_width},
                 DenseWidth{head.output_units}});

  const auto conv_count = static_cast<std::size_t>(std::count_if(
      entry.layers.begin(), entry.layers.end(),
      [](const ChainLayer& l) { return std::holds_alternative<ConvSpec>(l); }));
  model.frozen_layers_ = static_cast<std::size_t>(std::floor(backbone.frozen_fraction * conv_count + 1e-9));

  Rng init(seed);
  int channels = input.depth;
  std::size_t convs_seen = 0;
  for (const auto& layer : entry.layers) {
    // Everything below the first unfrozen conv stays fixed.
    const bool frozen = convs_seen < model.frozen_layers_;
    if (const auto* c = std::get_if<ConvSpec>(&layer)) {
      model.net_.add(std::make_unique<nn::Conv2D>(channels, c->filter, c->num_filters, c->padding,
                                                  c->stride, true, init),
                     !frozen);
      channels = c->num_filters;
      ++convs_seen;
    } else {
      const auto& p = std::get<PoolSpec>(layer);
      model.net_.add(std::make_unique<nn::MaxPool2D>(p.window, p.stride), !frozen);
    }
  }
  model.backbone_layers_ = model.net_.size();

  if (backbone.pretrained) {
    if (!backbone.weights_path.empty()) {
      const Checkpoint ckpt = load_checkpoint(backbone.weights_path, "");
      std::vector<double> all = model.net_.snapshot();
      if (ckpt.weights.size() != all.size()) {
        throw Error(ErrorCode::CheckpointMismatch, "backbone weights for " + backbone.name +
                                                       " have wrong size");
      }
      model.net_.restore(ckpt.weights);
    } else {
      spdlog::warn("{}: no pretrained weights supplied, using seeded initialization", backbone.name);
    }
  }

  model.net_.add(std::make_unique<nn::GlobalAvgPool>());
  model.net_.add(std::make_unique<nn::Dense>(channels, head.dense_width, nn::Activation::Relu,
                                             l2_on_dense, init));
  model.net_.add(std::make_unique<nn::Dropout>(head.dropout_rate));
  model.net_.add(std::make_unique<nn::Dense>(head.dense_width, head.output_units,
                                             nn::Activation::Sigmoid, l2_on_dense, init));
  return model;
}

std::vector<OrdinalVector> BranchModel::predict(std::span<const ImageGrid> images) const {
  std::vector<const ImageGrid*> ptrs;
  for (const auto& img : images) ptrs.push_back(&img);
  return run_images(net_, input_, ptrs);
}

OrdinalVector BranchModel::predict(const ImageGrid& image) const {
  const ImageGrid* ptr = &image;
  return run_images(net_, input_, std::span<const ImageGrid* const>(&ptr, 1)).front();
}

std::string BranchModel::fingerprint() const {
  std::ostringstream s;
  s << "branch|backbone=" << backbone_.name << "|frozen=" << frozen_layers_ << "|input="
    << shape_text(input_) << "|head=" << head_.dense_width << ',' << head_.output_units << "|layers=";
  for (const auto& k : net_.kinds()) s << k << ';';
  s << "|params=" << net_.parameter_count();
  return fnv1a_hex(s.str());
}

// ---------------------------------------------------------------------------
// Meta

std::size_t meta_parameter_count(const MetaModelSpec& spec) {
  std::size_t total = 0;
  std::size_t in = 2 * kOrdinalBits;
  for (int w : spec.widths) {
    total += in * static_cast<std::size_t>(w) + static_cast<std::size_t>(w);
    in = static_cast<std::size_t>(w);
  }
  return total + in * kOrdinalBits + kOrdinalBits;
}

MetaModel build_meta(const MetaModelSpec& spec, double l2_on_dense, std::uint64_t seed) {
  if (spec.layer_plan != canonical_meta_plan()) {
    throw Error(ErrorCode::SpecOrderViolation, "meta layer plan differs from the stacking head layout");
  }
  const auto dense_steps = static_cast<std::size_t>(
      std::count(spec.layer_plan.begin(), spec.layer_plan.end(), MetaStep::DenseRelu));
  if (spec.widths.size() != dense_steps ||
      std::any_of(spec.widths.begin(), spec.widths.end(), [](int w) { return w < 1; })) {
    throw Error(ErrorCode::InvalidArgument,
                "meta needs " + std::to_string(dense_steps) + " positive widths");
  }
  if (spec.dropout_rate < 0.0 || spec.dropout_rate >= 1.0) {
    throw Error(ErrorCode::InvalidArgument, "meta dropout must lie in [0,1)");
  }

  MetaModel meta;
  meta.spec_ = spec;
  Rng init(seed);
  int in = 2 * kOrdinalBits;
  std::size_t w = 0;
  for (MetaStep step : spec.layer_plan) {
    switch (step) {
      case MetaStep::DenseRelu:
        meta.net_.add(std::make_unique<nn::Dense>(in, spec.widths[w], nn::Activation::Relu, l2_on_dense, init));
        in = spec.widths[w++];
        break;
      case MetaStep::Dropout:
        meta.net_.add(std::make_unique<nn::Dropout>(spec.dropout_rate));
        break;
      case MetaStep::Sigmoid:
        meta.net_.add(std::make_unique<nn::Dense>(in, kOrdinalBits, nn::Activation::Sigmoid, l2_on_dense, init));
        break;
    }
  }
  return meta;
}

std::vector<OrdinalVector> MetaModel::predict(std::span<const StackedFeatures> features) const {
  nn::Tensor x({static_cast<int>(features.size()), 2 * kOrdinalBits});
  for (std::size_t i = 0; i < features.size(); ++i) {
    std::copy(features[i].begin(), features[i].end(), x.data.begin() + static_cast<std::ptrdiff_t>(i * features[i].size()));
  }
  const nn::Tensor y = net_.apply(x);
  std::vector<OrdinalVector> out(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (int j = 0; j < kOrdinalBits; ++j) out[i][j] = y.data[i * kOrdinalBits + j];
  }
  return out;
}

OrdinalVector MetaModel::predict(const StackedFeatures& features) const {
  return predict(std::span<const StackedFeatures>(&features, 1)).front();
}

std::string MetaModel::fingerprint() const {
  std::ostringstream s;
  s << "meta|widths=";
  for (int w : spec_.widths) s << w << ',';
  s << "|layers=";
  for (const auto& k : net_.kinds()) s << k << ';';
  s << "|params=" << net_.parameter_count();
  return fnv1a_hex(s.str());
}

StackedFeatures stack_features(const OrdinalVector& first, const OrdinalVector& second) {
  StackedFeatures out{};
  std::copy(first.begin(), first.end(), out.begin());
  std::copy(second.begin(), second.end(), out.begin() + kOrdinalBits);
  return out;
}

StackedDataset stacked_features(std::span<const BranchModel> branches, const ImageDataset& data) {
  if (branches.size() != 2) throw Error(ErrorCode::InvalidArgument, "stacking expects exactly two branches");
  std::vector<const ImageGrid*> ptrs;
  ptrs.reserve(data.size());
  for (const auto& img : data.images) ptrs.push_back(img.get());
  const auto first = run_images(branches[0].net(), branches[0].input_shape(), ptrs);
  const auto second = run_images(branches[1].net(), branches[1].input_shape(), ptrs);
  StackedDataset out;
  out.grades = data.grades;
  out.features.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out.features.push_back(stack_features(first[i], second[i]));
  return out;
}

std::vector<Prediction> predict(std::span<const BranchModel> branches, const MetaModel& meta,
                                std::span<const ImageGrid> images) {
  if (branches.size() != 2) throw Error(ErrorCode::InvalidArgument, "stacking expects exactly two branches");
  const auto first = branches[0].predict(images);
  const auto second = branches[1].predict(images);
  std::vector<StackedFeatures> stacked;
  for (std::size_t i = 0; i < images.size(); ++i) stacked.push_back(stack_features(first[i], second[i]));
  const auto probs = meta.predict(stacked);
  std::vector<Prediction> out;
  for (const auto& p : probs) out.push_back(Prediction{decode(p, 0.5), p});
  return out;
}

Prediction predict(std::span<const BranchModel> branches, const MetaModel& meta, const ImageGrid& image) {
  return predict(branches, meta, std::span<const ImageGrid>(&image, 1)).front();
}

nn::Tensor to_batch(std::span<const ImageGrid* const> images) {
  if (images.empty()) throw Error(ErrorCode::EmptyInput, "empty image batch");
  const int h = images.front()->height(), w = images.front()->width(), c = images.front()->channels();
  nn::Tensor batch({static_cast<int>(images.size()), h, w, c});
  std::size_t off = 0;
  for (const ImageGrid* img : images) {
    if (img->height() != h || img->width() != w || img->channels() != c) {
      throw Error(ErrorCode::ShapeMismatch, "images in a batch must share dimensions");
    }
    for (float v : img->values()) batch.data[off++] = v;
  }
  return batch;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fundus
