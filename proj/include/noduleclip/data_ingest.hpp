#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "noduleclip/common/geometry.hpp"

namespace noduleclip::ingest {

struct NoduleRecord {
  std::string patient_id;
  std::string nodule_id;
  std::string volume_uri;
  Vec3 centroid_mm{};
  int label_one_year = 0;
  std::optional<std::string> semantics_uri;
};

struct CohortManifest {
  std::string name;
  std::vector<NoduleRecord> records;
  // Directory the manifest was read from; relative URIs resolve against it.
  std::filesystem::path base_dir;

  // Sorted, unique.
  std::vector<std::string> patients() const;
  // Patient-level label: max over that patient's nodule labels.
  std::map<std::string, int> patient_labels() const;
  CohortManifest subset(const std::set<std::string>& patients, std::string subset_name) const;
  std::filesystem::path resolve(const std::string& uri) const;
};

struct FoldSplit {
  int fold_index = 0;
  std::set<std::string> train_patients;
  std::set<std::string> val_patients;
};

// CSV with header patient_id,nodule_id,volume_uri,cx_mm,cy_mm,cz_mm,label,semantics_uri.
CohortManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const CohortManifest& manifest, const std::filesystem::path& path);

// Throws ValidationError naming the first violated invariant.
void validate(const CohortManifest& manifest);

// Patient-level hold-out. Sorted patient ids are shuffled with `seed`; the
// first round(fraction * patients) go to the test side. With `stratified`,
// positive and negative patients are shuffled and split separately.
std::pair<CohortManifest, CohortManifest> hold_out_test(const CohortManifest& manifest, double fraction,
                                                        std::uint64_t seed, bool stratified = false);

// Round-robin deal of the shuffled patient list into k validation sets.
std::vector<FoldSplit> make_patient_folds(const CohortManifest& manifest, int k, std::uint64_t seed,
                                          bool stratified = false);

void save_splits(const std::vector<FoldSplit>& folds, const std::filesystem::path& path);
std::vector<FoldSplit> load_splits(const std::filesystem::path& path);

}  // namespace noduleclip::ingest
