#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "noduleclip/data_ingest.hpp"
#include "noduleclip/preprocess/volume.hpp"
#include "noduleclip/semantics/features.hpp"

// Procedural CT-like cohort: balls in parenchyma with optional spikes and a
// ground-glass rim, annotated consistently with the rendered morphology.
namespace noduleclip::synth {

struct SynthConfig {
  int n_patients = 56;
  std::uint64_t seed = 0;
  double malignant_rate = 0.4;
  // Every fourth patient carries a second nodule.
  int second_nodule_every = 4;

  void validate() const;
};

struct SynthNodule {
  std::string patient_id;
  std::string nodule_id;
  int label = 0;
  double radius_mm = 0.0;
  bool spiculated = false;
  bool part_solid = false;
  Vec3 centroid_mm{};
  std::vector<Vec3> spikes;  // unit directions, empty when smooth
  std::vector<double> spike_lengths_mm;
};

struct SynthPatient {
  std::string patient_id;
  std::vector<SynthNodule> nodules;
};

// Malignant radius U(7, 11) mm, benign U(3, 6.5) mm. Malignant nodules are
// spiculated with probability 0.85, benign ones smooth with probability 0.85.
std::vector<SynthPatient> sample_patients(const SynthConfig& config);

// Anisotropic grid (0.8, 0.8, 1.1) mm; parenchyma near -850 HU, solid tissue near 40 HU.
preprocess::Volume render_volume(const SynthPatient& patient, std::uint64_t seed);

semantics::SemanticFeatureSet describe(const SynthNodule& nodule, std::uint64_t seed);

struct SynthOutput {
  std::filesystem::path manifest_path;
  ingest::CohortManifest manifest;
  std::vector<semantics::AnnotatedNodule> annotations;
  std::vector<SynthPatient> patients;
};

// Writes volumes/<patient>.nii.gz (int16), semantics.json, truth.csv and
// manifest.csv under `out_dir`. Byte-identical for a fixed seed.
SynthOutput write_cohort(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace noduleclip::synth
