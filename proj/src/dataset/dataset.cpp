#include "noduleclip/dataset.hpp"

#include <algorithm>

#include "noduleclip/common/error.hpp"
#include "noduleclip/preprocess/view_cache.hpp"
#include "noduleclip/semantics/report.hpp"

namespace noduleclip::dataset {
namespace {

using AnnotationIndex = std::map<std::pair<std::string, std::string>, semantics::SemanticFeatureSet>;

preprocess::ViewStack deterministic_stack(const preprocess::Volume& volume, const Vec3& centroid,
                                          const LoadOptions& options) {
  const auto crop = preprocess::clip_normalize(preprocess::crop_nodule(volume, centroid));
  return preprocess::to_model_input(preprocess::slice_nine_planes(crop), options.stats, options.image_size);
}

}  // namespace

std::vector<std::size_t> Cohort::indices_for(const std::set<std::string>& patients) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (patients.contains(samples_[i].patient_id)) out.push_back(i);
  }
  return out;
}

std::vector<std::string> Cohort::patients() const {
  std::set<std::string> ids;
  for (const auto& s : samples_) ids.insert(s.patient_id);
  return {ids.begin(), ids.end()};
}

Cohort load_cohort(const ingest::CohortManifest& manifest, const LoadOptions& options) {
  ingest::validate(manifest);
  std::map<std::string, std::shared_ptr<const preprocess::Volume>> volumes;
  std::map<std::string, AnnotationIndex> annotations;

  std::vector<NoduleSample> samples;
  samples.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    NoduleSample s;
    s.patient_id = r.patient_id;
    s.nodule_id = r.nodule_id;
    s.label = r.label_one_year;
    s.centroid_mm = r.centroid_mm;
    const std::string where = "record " + r.patient_id + "/" + r.nodule_id;

    if (r.semantics_uri) {
      auto it = annotations.find(*r.semantics_uri);
      if (it == annotations.end()) {
        AnnotationIndex index;
        for (auto& a : semantics::load_annotations(manifest.resolve(*r.semantics_uri))) {
          index[{a.patient_id, a.nodule_id}] = std::move(a.features);
        }
        it = annotations.emplace(*r.semantics_uri, std::move(index)).first;
      }
      auto found = it->second.find({r.patient_id, r.nodule_id});
      if (found != it->second.end()) {
        s.features = found->second;
        s.annotated = true;
      }
    }

    std::optional<std::filesystem::path> cached;
    if (options.view_cache) {
      const auto stem = *options.view_cache / preprocess::cache_stem(r.patient_id, r.nodule_id);
      if (preprocess::view_stack_cached(stem)) cached = stem;
    }
    if (cached) {
      s.eval_stack = preprocess::load_view_stack(*cached).stack;
      if (s.eval_stack.size != options.image_size) {
        throw ValidationError("cached views for " + where + " have size " + std::to_string(s.eval_stack.size) +
                              ", model expects " + std::to_string(options.image_size));
      }
    }

    if (options.load_volumes || !cached) {
      auto it = volumes.find(r.volume_uri);
      if (it == volumes.end()) {
        preprocess::Volume raw;
        try {
          raw = preprocess::read_nifti(manifest.resolve(r.volume_uri));
        } catch (const std::exception& e) {
          throw RuntimeFailure(where + ": " + e.what());
        }
        auto iso = std::make_shared<const preprocess::Volume>(preprocess::resample_isotropic(raw));
        it = volumes.emplace(r.volume_uri, std::move(iso)).first;
      }
      s.volume = it->second;
      if (!cached) s.eval_stack = deterministic_stack(*s.volume, s.centroid_mm, options);
    }
    samples.push_back(std::move(s));
  }
  return Cohort(std::move(samples));
}

preprocess::ViewStack augmented_stack(const NoduleSample& sample, const preprocess::AugmentationConfig& config,
                                      Rng& rng, int image_size, const preprocess::ChannelStats& stats) {
  if (!sample.volume) {
    throw ValidationError("augmentation needs the volume of " + sample.patient_id + "/" + sample.nodule_id);
  }
  const auto aug = preprocess::augment(*sample.volume, sample.centroid_mm, config, rng);
  return preprocess::to_model_input(preprocess::slice_nine_planes(aug.crop), stats, image_size);
}

std::string training_text(const NoduleSample& sample, const semantics::TextAugmentConfig& config, Rng& rng) {
  const auto report = semantics::render_report(sample.features, rng);
  const auto text = semantics::select_training_text(report, rng);
  return semantics::augment_text(text, config, rng);
}

}  // namespace noduleclip::dataset
