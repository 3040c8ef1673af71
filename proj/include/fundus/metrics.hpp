#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fundus/labels.hpp"

namespace fundus {

// Rows = actual grade, columns = predicted grade.
struct ConfusionMatrix {
  std::array<std::array<std::int64_t, kNumGrades>, kNumGrades> counts{};

  std::int64_t total() const noexcept;
  std::int64_t trace() const noexcept;
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(const std::vector<Grade>& actual, const std::vector<Grade>& predicted);

enum class Averaging { Macro, Weighted };

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
  // Precision or recall had a zero denominator and was reported as 0.
  bool undefined = false;
};

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> qwk;
  Averaging averaging = Averaging::Weighted;
  std::array<ClassScores, kNumGrades> per_class{};
  ConfusionMatrix confusion;
};

double f1_score(double precision, double recall) noexcept;

// Macro averages over grades that occur in either actual or predicted labels;
// weighted averages by actual support.
MetricsReport classification_metrics(const ConfusionMatrix& cm,
                                     Averaging averaging = Averaging::Weighted);

// Quadratic weighted kappa with w_ij = (i-j)^2 / (N-1)^2 and expected counts from the
// outer product of the marginals. Returns 1.0 when all mass sits on one agreed grade.
double quadratic_weighted_kappa(const ConfusionMatrix& cm);

// classification_metrics + qwk; qwk left empty only if the marginals are degenerate.
MetricsReport evaluate_grades(const std::vector<Grade>& actual, const std::vector<Grade>& predicted,
                              Averaging averaging = Averaging::Weighted);

// key: value lines.
std::string format_report_text(const MetricsReport& report);
// Flat JSON: accuracy, precision, recall, f1, qwk, confusion (25 row-major integers).
std::string format_report_json(const MetricsReport& report);
// 5x5 whitespace-separated grid.
std::string format_confusion_grid(const ConfusionMatrix& cm);

MetricsReport parse_report_json(const std::string& text);

}  // namespace fundus
