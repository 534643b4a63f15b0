#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "noduleclip/common/random.hpp"
#include "noduleclip/data_ingest.hpp"
#include "noduleclip/preprocess/augment.hpp"
#include "noduleclip/preprocess/preprocess.hpp"
#include "noduleclip/semantics/features.hpp"
#include "noduleclip/semantics/text_augment.hpp"

// In-memory cohort joining manifest records, resampled volumes, semantic
// annotations and the deterministic view stacks used for evaluation.
namespace noduleclip::dataset {

struct NoduleSample {
  std::string patient_id;
  std::string nodule_id;
  int label = 0;
  semantics::SemanticFeatureSet features;
  bool annotated = false;  // semantics file had an entry for this nodule
  std::shared_ptr<const preprocess::Volume> volume;  // 1 mm isotropic; null when loaded from cache only
  Vec3 centroid_mm{};
  preprocess::ViewStack eval_stack;
};

struct LoadOptions {
  int image_size = preprocess::kModelImageSize;
  preprocess::ChannelStats stats;
  // Volumes are needed for augmentation; inference can run from cached stacks alone.
  bool load_volumes = true;
  // Directory of cached view stacks (cache_stem names); used when present.
  std::optional<std::filesystem::path> view_cache;
};

class Cohort {
 public:
  Cohort() = default;
  explicit Cohort(std::vector<NoduleSample> samples) : samples_(std::move(samples)) {}

  const std::vector<NoduleSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  const NoduleSample& operator[](std::size_t i) const { return samples_[i]; }

  // Sample indices whose patient is in `patients`, in cohort order.
  std::vector<std::size_t> indices_for(const std::set<std::string>& patients) const;
  std::vector<std::string> patients() const;

 private:
  std::vector<NoduleSample> samples_;
};

// Volumes shared by several nodules are read and resampled once. Throws
// RuntimeFailure naming the record when a file cannot be read.
Cohort load_cohort(const ingest::CohortManifest& manifest, const LoadOptions& options = {});

// Training view: augment -> nine planes -> model input.
preprocess::ViewStack augmented_stack(const NoduleSample& sample, const preprocess::AugmentationConfig& config,
                                      Rng& rng, int image_size = preprocess::kModelImageSize,
                                      const preprocess::ChannelStats& stats = {});

// Training text: render a report, pick findings or impression, then augment.
std::string training_text(const NoduleSample& sample, const semantics::TextAugmentConfig& config, Rng& rng);

}  // namespace noduleclip::dataset
