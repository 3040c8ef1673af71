#include "fundus/labels.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "fundus/error.hpp"
#include "fundus/random.hpp"

namespace fundus {

Grade::Grade(int value) : value_(value) {
  if (value < 0 || value >= kNumGrades) {
    throw Error(ErrorCode::InvalidGrade, "grade " + std::to_string(value) + " outside 0..4");
  }
}

OrdinalVector encode(Grade grade) {
  OrdinalVector bits{};
  for (int i = 0; i < kOrdinalBits; ++i) bits[i] = i < grade.value() ? 1.0 : 0.0;
  return bits;
}

Grade decode(const OrdinalVector& probs, double threshold) {
  int n = 0;
  while (n < kOrdinalBits && probs[n] > threshold) ++n;
  return Grade(n);
}

ResamplePlan build_resample_plan(const std::map<int, std::size_t>& class_counts,
                                 std::size_t per_class_target, std::uint64_t seed) {
  ResamplePlan plan;
  plan.per_class_target = per_class_target;
  plan.seed = seed;
  for (const auto& [cls, n] : class_counts) {
    if (n == 0) throw Error(ErrorCode::EmptyClass, "class " + std::to_string(cls) + " has no samples");
    std::vector<std::size_t> indices;
    indices.reserve(per_class_target);
    const std::size_t copies = per_class_target / n;
    for (std::size_t r = 0; r < copies; ++r) {
      for (std::size_t i = 0; i < n; ++i) indices.push_back(i);
    }
    const std::size_t remainder = per_class_target % n;
    if (remainder > 0) {
      std::vector<std::size_t> pool(n);
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(cls)));
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(remainder);
      std::sort(pool.begin(), pool.end());
      indices.insert(indices.end(), pool.begin(), pool.end());
    }
    plan.mapping.emplace(cls, std::move(indices));
  }
  return plan;
}

std::map<int, std::size_t> class_histogram(const DatasetManifest& manifest) {
  std::map<int, std::size_t> hist;
  for (const auto& r : manifest.records) ++hist[r.grade];
  return hist;
}

DatasetManifest apply_resample_plan(const ResamplePlan& plan, const DatasetManifest& dataset) {
  std::map<int, std::vector<const SampleRecord*>> by_class;
  for (const auto& r : dataset.records) by_class[r.grade].push_back(&r);

  DatasetManifest out;
  out.split_tag = dataset.split_tag;
  out.provenance = dataset.provenance + "; resampled to " + std::to_string(plan.per_class_target) +
                   "/class seed=" + std::to_string(plan.seed);

  std::map<std::string, int> seen;
  for (const auto& [cls, indices] : plan.mapping) {
    const auto it = by_class.find(cls);
    const std::size_t available = it == by_class.end() ? 0 : it->second.size();
    for (std::size_t idx : indices) {
      if (idx >= available) {
        throw Error(ErrorCode::IndexOutOfRange, "class " + std::to_string(cls) + " index " +
                                                    std::to_string(idx) + " >= " +
                                                    std::to_string(available));
      }
      SampleRecord rec = *it->second[idx];
      if (rec.source_id.empty()) rec.source_id = rec.id;
      const int k = seen[rec.id]++;
      if (k > 0) rec.id += "#" + std::to_string(k);
      out.records.push_back(std::move(rec));
    }
  }
  Rng rng(derive_seed(plan.seed, 0xA11CEull));
  std::shuffle(out.records.begin(), out.records.end(), rng);
  return out;
}

}  // namespace fundus
