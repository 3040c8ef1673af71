#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include <spdlog/spdlog.h>

#include "fundus/error.hpp"
#include "fundus/model.hpp"

namespace fundus {

namespace {

using BatchMaker = std::function<nn::Tensor(std::span<const std::size_t>, Rng&)>;
using Evaluator = std::function<std::vector<OrdinalVector>()>;

double qwk_or_zero(const std::vector<Grade>& actual, const std::vector<Grade>& predicted) {
  return evaluate_grades(actual, predicted).qwk.value_or(0.0);
}

// Minibatch BCE training with Adam; keeps the weights of the best validation-QWK epoch.
TrainingHistory fit(nn::Sequential& net, const std::vector<Grade>& train_grades, const BatchMaker& make_batch,
                    const std::vector<Grade>& val_grades, const Evaluator& eval_val,
                    const TrainConfig& cfg, const char* tag) {
  cfg.validate();
  TrainingHistory history;
  if (cfg.epochs == 0) return history;
  if (train_grades.empty() || val_grades.empty()) {
    throw Error(ErrorCode::EmptyDataset, std::string(tag) + ": training and validation sets must be non-empty");
  }

  std::vector<OrdinalVector> train_targets, val_targets;
  for (Grade g : train_grades) train_targets.push_back(encode(g));
  for (Grade g : val_grades) val_targets.push_back(encode(g));

  nn::Adam adam(nn::AdamOptions{.learning_rate = cfg.learning_rate});
  const auto params = net.trainable_parameters();
  std::vector<double> best_weights = net.snapshot();
  double best_qwk = -std::numeric_limits<double>::infinity();

  const std::size_t n = train_grades.size();
  std::vector<std::size_t> order(n);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto idx = std::span<const std::size_t>(order).subspan(
          start, std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n - start));
      const nn::Tensor x = make_batch(idx, rng);
      net.zero_grad();
      const nn::Tensor p = net.forward(x, rng);

      const auto b = static_cast<int>(idx.size());
      nn::Tensor grad({b, kOrdinalBits});
      double batch_loss = 0.0;
      for (int i = 0; i < b; ++i) {
        OrdinalVector pred{};
        std::copy_n(p.data.begin() + i * kOrdinalBits, kOrdinalBits, pred.begin());
        const OrdinalVector& target = train_targets[idx[i]];
        batch_loss += bce_loss(pred, target);
        const OrdinalVector g = bce_gradient(pred, target);
        for (int j = 0; j < kOrdinalBits; ++j) grad.data[i * kOrdinalBits + j] = g[j] / b;
        if (decode(pred) == train_grades[idx[i]]) ++correct;
      }
      if (!std::isfinite(batch_loss)) {
        throw Error(ErrorCode::NonFiniteLoss, std::string(tag) + ": epoch " + std::to_string(epoch) +
                                                  " batch at " + std::to_string(start) +
                                                  " produced loss " + std::to_string(batch_loss));
      }
      loss_sum += batch_loss;
      net.backward(grad);
      adam.step(params);
    }

    const auto val_pred = eval_val();
    double val_loss = 0.0;
    std::vector<Grade> val_decoded;
    for (std::size_t i = 0; i < val_pred.size(); ++i) {
      val_loss += bce_loss(val_pred[i], val_targets[i]);
      val_decoded.push_back(decode(val_pred[i]));
    }
    if (!std::isfinite(val_loss)) {
      throw Error(ErrorCode::NonFiniteLoss, std::string(tag) + ": validation loss is not finite");
    }
    std::size_t val_correct = 0;
    for (std::size_t i = 0; i < val_decoded.size(); ++i) val_correct += val_decoded[i] == val_grades[i];

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    rec.val_loss = val_loss / static_cast<double>(val_pred.size());
    rec.val_acc = static_cast<double>(val_correct) / static_cast<double>(val_pred.size());
    rec.val_qwk = qwk_or_zero(val_grades, val_decoded);
    history.epochs.push_back(rec);
    spdlog::info("{} epoch {}/{} loss={:.4f} acc={:.3f} val_loss={:.4f} val_acc={:.3f} val_qwk={:.3f}", tag,
                 epoch, cfg.epochs, rec.train_loss, rec.train_acc, rec.val_loss, rec.val_acc, rec.val_qwk);

    if (rec.val_qwk > best_qwk) {
      best_qwk = rec.val_qwk;
      history.best_epoch = epoch;
      best_weights = net.snapshot();
    }
  }
  net.restore(best_weights);
  return history;
}

}  // namespace

double TrainingHistory::best_qwk() const {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& e : epochs) best = std::max(best, e.val_qwk);
  return best;
}

TrainingHistory train_branch(BranchModel& model, const ImageDataset& train, const ImageDataset& val,
                             const TrainConfig& cfg, const std::optional<AugmentConfig>& augment_cfg) {
  if (augment_cfg) augment_cfg->validate();
  const BatchMaker make_batch = [&](std::span<const std::size_t> idx, Rng& rng) {
    std::vector<ImageGrid> owned;
    std::vector<const ImageGrid*> ptrs;
    owned.reserve(idx.size());
    for (std::size_t i : idx) {
      if (augment_cfg) {
        owned.push_back(augment(*train.images[i], *augment_cfg, rng));
        ptrs.push_back(&owned.back());
      } else {
        ptrs.push_back(train.images[i].get());
      }
    }
    return to_batch(ptrs);
  };
  const Evaluator eval_val = [&] {
    std::vector<const ImageGrid*> ptrs;
    for (const auto& img : val.images) ptrs.push_back(img.get());
    std::vector<OrdinalVector> out;
    constexpr std::size_t kChunk = 32;
    for (std::size_t start = 0; start < ptrs.size(); start += kChunk) {
      const auto chunk = std::span<const ImageGrid* const>(ptrs).subspan(start, std::min(kChunk, ptrs.size() - start));
      const nn::Tensor p = model.apply(to_batch(chunk));
      for (std::size_t b = 0; b < chunk.size(); ++b) {
        OrdinalVector v{};
        std::copy_n(p.data.begin() + static_cast<std::ptrdiff_t>(b * kOrdinalBits), kOrdinalBits, v.begin());
        out.push_back(v);
      }
    }
    return out;
  };
  return fit(model.net(), train.grades, make_batch, val.grades, eval_val, cfg,
             model.backbone().name.c_str());
}

TrainingHistory train_meta(MetaModel& meta, const StackedDataset& train, const StackedDataset& val,
                           const TrainConfig& cfg) {
  const BatchMaker make_batch = [&](std::span<const std::size_t> idx, Rng&) {
    nn::Tensor x({static_cast<int>(idx.size()), 2 * kOrdinalBits});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy(train.features[idx[i]].begin(), train.features[idx[i]].end(),
                x.data.begin() + static_cast<std::ptrdiff_t>(i * 2 * kOrdinalBits));
    }
    return x;
  };
  const Evaluator eval_val = [&] { return meta.predict(val.features); };
  return fit(meta.net(), train.grades, make_batch, val.grades, eval_val, cfg, "meta");
}

}  // namespace fundus
