#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "fundus/manifest.hpp"

namespace fundus {

inline constexpr int kNumGrades = 5;
inline constexpr int kOrdinalBits = kNumGrades - 1;

// DR severity 0 (none) .. 4 (proliferative).
class Grade {
 public:
  constexpr Grade() = default;
  explicit Grade(int value);

  constexpr int value() const noexcept { return value_; }
  friend constexpr auto operator<=>(Grade, Grade) = default;

 private:
  int value_ = 0;
};

// Bit k means "severity at least k+1". Targets are prefix-of-ones; predictions are probabilities.
using OrdinalVector = std::array<double, kOrdinalBits>;

OrdinalVector encode(Grade grade);

// Length of the leading run of entries strictly above `threshold`.
Grade decode(const OrdinalVector& probs, double threshold = 0.5);

struct ResamplePlan {
  std::size_t per_class_target = 700;
  std::uint64_t seed = 0;
  // class -> within-class source positions (0-based, in manifest order), one per output slot.
  std::map<int, std::vector<std::size_t>> mapping;
};

// Each source index is replicated floor(target/n) times, then (target mod n) extra
// indices are drawn without replacement. For n > target this reduces to plain
// subsampling without replacement.
ResamplePlan build_resample_plan(const std::map<int, std::size_t>& class_counts,
                                 std::size_t per_class_target, std::uint64_t seed);

// Materializes the plan against `dataset`, then shuffles deterministically by plan.seed.
// Replicas after the first get ids "<source_id>#<k>" so ids stay unique.
DatasetManifest apply_resample_plan(const ResamplePlan& plan, const DatasetManifest& dataset);

std::map<int, std::size_t> class_histogram(const DatasetManifest& manifest);

}  // namespace fundus
