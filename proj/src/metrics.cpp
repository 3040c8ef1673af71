#include "fundus/metrics.hpp"

#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "fundus/error.hpp"

namespace fundus {

std::int64_t ConfusionMatrix::total() const noexcept {
  std::int64_t t = 0;
  for (const auto& row : counts) {
    for (auto v : row) t += v;
  }
  return t;
}

std::int64_t ConfusionMatrix::trace() const noexcept {
  std::int64_t t = 0;
  for (int i = 0; i < kNumGrades; ++i) t += counts[i][i];
  return t;
}

ConfusionMatrix confusion(const std::vector<Grade>& actual, const std::vector<Grade>& predicted) {
  if (actual.size() != predicted.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(actual.size()) + " actual vs " +
                                               std::to_string(predicted.size()) + " predicted");
  }
  if (actual.empty()) throw Error(ErrorCode::EmptyInput, "no samples to score");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    ++cm.counts[actual[i].value()][predicted[i].value()];
  }
  return cm;
}

double f1_score(double precision, double recall) noexcept {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

MetricsReport classification_metrics(const ConfusionMatrix& cm, Averaging averaging) {
  const std::int64_t total = cm.total();
  if (total <= 0) throw Error(ErrorCode::EmptyInput, "confusion matrix is empty");

  MetricsReport report;
  report.averaging = averaging;
  report.confusion = cm;
  report.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);

  int macro_classes = 0;
  for (int k = 0; k < kNumGrades; ++k) {
    std::int64_t tp = cm.counts[k][k], fp = 0, fn = 0;
    for (int j = 0; j < kNumGrades; ++j) {
      if (j == k) continue;
      fp += cm.counts[j][k];
      fn += cm.counts[k][j];
    }
    ClassScores& s = report.per_class[k];
    s.support = tp + fn;
    s.undefined = (tp + fp == 0) || (tp + fn == 0);
    s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    s.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    s.f1 = f1_score(s.precision, s.recall);

    if (averaging == Averaging::Weighted) {
      const double w = static_cast<double>(s.support) / static_cast<double>(total);
      report.precision += w * s.precision;
      report.recall += w * s.recall;
      report.f1 += w * s.f1;
    } else if (tp + fp + fn > 0) {
      ++macro_classes;
      report.precision += s.precision;
      report.recall += s.recall;
      report.f1 += s.f1;
    }
  }
  if (averaging == Averaging::Macro && macro_classes > 0) {
    report.precision /= macro_classes;
    report.recall /= macro_classes;
    report.f1 /= macro_classes;
  }
  return report;
}

double quadratic_weighted_kappa(const ConfusionMatrix& cm) {
  const double total = static_cast<double>(cm.total());
  if (total <= 0.0) throw Error(ErrorCode::EmptyInput, "confusion matrix is empty");

  std::array<double, kNumGrades> rows{}, cols{};
  for (int i = 0; i < kNumGrades; ++i) {
    for (int j = 0; j < kNumGrades; ++j) {
      rows[i] += static_cast<double>(cm.counts[i][j]);
      cols[j] += static_cast<double>(cm.counts[i][j]);
    }
  }
  constexpr double norm = (kNumGrades - 1) * (kNumGrades - 1);
  double observed = 0.0, expected = 0.0;
  for (int i = 0; i < kNumGrades; ++i) {
    for (int j = 0; j < kNumGrades; ++j) {
      const double w = (i - j) * (i - j) / norm;
      observed += w * static_cast<double>(cm.counts[i][j]);
      expected += w * rows[i] * cols[j] / total;
    }
  }
  if (expected == 0.0) {
    if (observed == 0.0) return 1.0;
    throw Error(ErrorCode::DegenerateMarginals, "expected disagreement is zero");
  }
  return 1.0 - observed / expected;
}

MetricsReport evaluate_grades(const std::vector<Grade>& actual, const std::vector<Grade>& predicted,
                              Averaging averaging) {
  MetricsReport report = classification_metrics(confusion(actual, predicted), averaging);
  try {
    report.qwk = quadratic_weighted_kappa(report.confusion);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateMarginals) throw;
  }
  return report;
}

std::string format_report_text(const MetricsReport& report) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "averaging: " << (report.averaging == Averaging::Weighted ? "weighted" : "macro") << '\n';
  out << "accuracy: " << report.accuracy << '\n';
  out << "precision: " << report.precision << '\n';
  out << "recall: " << report.recall << '\n';
  out << "f1: " << report.f1 << '\n';
  out << "qwk: ";
  if (report.qwk) out << *report.qwk;
  else out << "undefined";
  out << '\n';
  for (int k = 0; k < kNumGrades; ++k) {
    const auto& s = report.per_class[k];
    out << "class_" << k << ": precision=" << s.precision << " recall=" << s.recall
        << " f1=" << s.f1 << " support=" << s.support << (s.undefined ? " undefined" : "") << '\n';
  }
  return out.str();
}

std::string format_report_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["accuracy"] = report.accuracy;
  j["precision"] = report.precision;
  j["recall"] = report.recall;
  j["f1"] = report.f1;
  j["qwk"] = report.qwk ? nlohmann::ordered_json(*report.qwk) : nlohmann::ordered_json(nullptr);
  auto flat = nlohmann::ordered_json::array();
  for (const auto& row : report.confusion.counts) {
    for (auto v : row) flat.push_back(v);
  }
  j["confusion"] = std::move(flat);
  return j.dump(2) + "\n";
}

std::string format_confusion_grid(const ConfusionMatrix& cm) {
  std::ostringstream out;
  for (const auto& row : cm.counts) {
    for (int j = 0; j < kNumGrades; ++j) out << (j ? " " : "") << row[j];
    out << '\n';
  }
  return out.str();
}

MetricsReport parse_report_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ConfusionMatrix cm;
  const auto& flat = j.at("confusion");
  if (flat.size() != kNumGrades * kNumGrades) {
    throw Error(ErrorCode::InvalidArgument, "confusion must hold 25 integers");
  }
  for (int i = 0; i < kNumGrades * kNumGrades; ++i) {
    cm.counts[i / kNumGrades][i % kNumGrades] = flat[i].get<std::int64_t>();
  }
  MetricsReport report;
  if (cm.total() > 0) report = classification_metrics(cm);
  report.confusion = cm;
  report.accuracy = j.at("accuracy").get<double>();
  report.precision = j.at("precision").get<double>();
  report.recall = j.at("recall").get<double>();
  report.f1 = j.at("f1").get<double>();
  if (!j.at("qwk").is_null()) report.qwk = j.at("qwk").get<double>();
  return report;
}

}  // namespace fundus
