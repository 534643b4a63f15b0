#include "noduleclip/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "noduleclip/common/error.hpp"
#include "noduleclip/common/random.hpp"

namespace noduleclip::synth {
namespace {

constexpr Index3 kDims{96, 96, 72};
constexpr Vec3 kSpacing{0.8, 0.8, 1.1};
constexpr float kParenchymaHu = -850.0f;
constexpr float kSolidHu = 40.0f;
constexpr float kGroundGlassHu = -450.0f;
constexpr double kSpikeCos = 0.966;  // spikes taper to zero at about 15 degrees

Vec3 origin() {
  return {-0.5 * kDims[0] * kSpacing[0], -0.5 * kDims[1] * kSpacing[1], -0.5 * kDims[2] * kSpacing[2]};
}

Vec3 random_direction(Rng& rng) {
  for (;;) {
    const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-6) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

double round1(double x) { return std::round(x * 10.0) / 10.0; }

template <class T>
T pick(const std::vector<T>& options, Rng& rng) {
  return options[rng.index(options.size())];
}

// Boundary radius along unit direction u.
double surface_radius(const SynthNodule& n, double phase, const Vec3& u) {
  const double azimuth = std::atan2(u[1], u[0]);
  double r = n.radius_mm * (1.0 + 0.05 * std::sin(3.0 * azimuth + phase) * std::sqrt(std::max(0.0, 1.0 - u[2] * u[2])));
  for (std::size_t k = 0; k < n.spikes.size(); ++k) {
    const auto& v = n.spikes[k];
    const double c = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    if (c <= kSpikeCos) continue;
    const double t = (c - kSpikeCos) / (1.0 - kSpikeCos);
    r = std::max(r, n.radius_mm + n.spike_lengths_mm[k] * t * t);
  }
  return r;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_patients < 10) throw ValidationError("synthetic cohort needs at least 10 patients");
  if (!(malignant_rate > 0.0 && malignant_rate < 1.0)) throw ValidationError("malignant_rate must lie in (0, 1)");
  if (second_nodule_every < 1) throw ValidationError("second_nodule_every must be positive");
}

std::vector<SynthPatient> sample_patients(const SynthConfig& config) {
  config.validate();
  std::vector<SynthPatient> out;
  for (int p = 0; p < config.n_patients; ++p) {
    Rng rng(derive_seed(config.seed, {0x9a71u, static_cast<std::uint64_t>(p)}));
    SynthPatient patient;
    patient.patient_id = fmt::format("SYN{:04d}", p);
    const int count = p % config.second_nodule_every == 0 ? 2 : 1;
    for (int k = 0; k < count; ++k) {
      SynthNodule n;
      n.patient_id = patient.patient_id;
      n.nodule_id = fmt::format("N{}", k + 1);
      n.label = rng.bernoulli(config.malignant_rate) ? 1 : 0;
      n.radius_mm = n.label ? rng.uniform(7.0, 11.0) : rng.uniform(3.0, 6.5);
      n.spiculated = n.label ? rng.bernoulli(0.85) : !rng.bernoulli(0.85);
      n.part_solid = rng.bernoulli(n.label ? 0.25 : 0.1);
      const double x = count == 1 ? rng.uniform(-6.0, 6.0) : (k == 0 ? -20.0 : 20.0) + rng.uniform(-2.0, 2.0);
      n.centroid_mm = {x, rng.uniform(-6.0, 6.0), rng.uniform(-6.0, 6.0)};
      if (n.spiculated) {
        const int spikes = 6 + static_cast<int>(rng.index(7));
        for (int s = 0; s < spikes; ++s) {
          n.spikes.push_back(random_direction(rng));
          n.spike_lengths_mm.push_back(std::max(3.0, rng.uniform(0.5, 0.9) * n.radius_mm));
        }
      }
      patient.nodules.push_back(std::move(n));
    }
    out.push_back(std::move(patient));
  }
  return out;
}

preprocess::Volume render_volume(const SynthPatient& patient, std::uint64_t seed) {
  Rng rng(seed);
  preprocess::Volume v(kDims, kSpacing, origin(), kParenchymaHu);
  // Tissue fraction and tissue HU, filled nodule by nodule.
  std::vector<float> fraction(v.size(), 0.0f), tissue(v.size(), kSolidHu);
  for (const auto& n : patient.nodules) {
    const double phase = rng.uniform(0.0, 6.283185307179586);
    double reach = n.radius_mm * 1.06 + 1.0;
    for (double l : n.spike_lengths_mm) reach = std::max(reach, n.radius_mm + l + 1.0);
    const auto lo = v.to_voxel({n.centroid_mm[0] - reach, n.centroid_mm[1] - reach, n.centroid_mm[2] - reach});
    const auto hi = v.to_voxel({n.centroid_mm[0] + reach, n.centroid_mm[1] + reach, n.centroid_mm[2] + reach});
    for (int z = std::max(0, static_cast<int>(std::floor(lo[2]))); z <= std::min(kDims[2] - 1, static_cast<int>(std::ceil(hi[2]))); ++z) {
      for (int y = std::max(0, static_cast<int>(std::floor(lo[1]))); y <= std::min(kDims[1] - 1, static_cast<int>(std::ceil(hi[1]))); ++y) {
        for (int x = std::max(0, static_cast<int>(std::floor(lo[0]))); x <= std::min(kDims[0] - 1, static_cast<int>(std::ceil(hi[0]))); ++x) {
          const Vec3 d{v.origin_mm[0] + x * kSpacing[0] - n.centroid_mm[0], v.origin_mm[1] + y * kSpacing[1] - n.centroid_mm[1],
                       v.origin_mm[2] + z * kSpacing[2] - n.centroid_mm[2]};
          const double dist = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
          const Vec3 u = dist > 1e-9 ? Vec3{d[0] / dist, d[1] / dist, d[2] / dist} : Vec3{0.0, 0.0, 1.0};
          const double R = surface_radius(n, phase, u);
          const double f = std::clamp((R - dist) / 0.8 + 0.5, 0.0, 1.0);
          const auto i = v.index(x, y, z);
          if (f > fraction[i]) {
            fraction[i] = static_cast<float>(f);
            tissue[i] = n.part_solid && dist > 0.55 * n.radius_mm ? kGroundGlassHu : kSolidHu;
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double hu = kParenchymaHu * (1.0 - fraction[i]) + tissue[i] * fraction[i] + rng.normal(0.0, 20.0);
    v.voxels[i] = static_cast<float>(std::round(hu));
  }
  return v;
}

semantics::SemanticFeatureSet describe(const SynthNodule& n, std::uint64_t seed) {
  using semantics::Feature;
  Rng rng(seed);
  semantics::SemanticFeatureSet f;
  const double longest = round1(2.0 * n.radius_mm * (n.spiculated ? 1.15 : 1.05) + rng.normal(0.0, 0.4));
  f.set_number(Feature::longest_axial_diameter, std::max(1.0, longest));
  f.set_number(Feature::short_diameter, std::max(1.0, round1(longest * rng.uniform(0.75, 0.95))));
  f.add_margin(n.spiculated ? "Spiculated" : "Smooth");
  f.set_category(Feature::consistency, n.part_solid ? "Part-solid" : "Solid");
  f.set_category(Feature::shape, n.spiculated ? "Irregular" : pick<std::string>({"Round", "Ovoid"}, rng));
  f.set_category(Feature::margin_conspicuity,
                 n.spiculated && rng.bernoulli(0.7) ? "Poorly marginated" : "Well marginated");
  f.set_binary(Feature::vascular_convergence, rng.bernoulli(n.label ? 0.6 : 0.1));
  f.set_binary(Feature::pleural_attachment, rng.bernoulli(0.15));
  f.set_binary(Feature::necrosis, n.label && n.radius_mm > 9.5 && rng.bernoulli(0.3));
  if (rng.bernoulli(0.8)) {
    f.set_category(Feature::level_of_suspicion,
                   n.label ? pick<std::string>({"Moderately High", "High"}, rng)
                           : pick<std::string>({"Very Low", "Moderately Low", "Intermediate"}, rng));
  }
  return f;
}

SynthOutput write_cohort(const SynthConfig& config, const std::filesystem::path& out_dir) {
  SynthOutput out;
  out.patients = sample_patients(config);
  std::filesystem::create_directories(out_dir / "volumes");

  out.manifest.name = "synthetic";
  out.manifest.base_dir = out_dir;
  std::ofstream truth(out_dir / "truth.csv", std::ios::trunc);
  if (!truth) throw RuntimeFailure("cannot write " + (out_dir / "truth.csv").string());
  truth << "patient_id,nodule_id,label,radius_mm,spiculated,part_solid\n";
  for (std::size_t p = 0; p < out.patients.size(); ++p) {
    const auto& patient = out.patients[p];
    const std::string uri = "volumes/" + patient.patient_id + ".nii.gz";
    const auto volume = render_volume(patient, derive_seed(config.seed, {0x701u, p}));
    preprocess::write_nifti(volume, out_dir / uri, preprocess::NiftiStorage::int16);
    for (std::size_t k = 0; k < patient.nodules.size(); ++k) {
      const auto& n = patient.nodules[k];
      out.manifest.records.push_back({n.patient_id, n.nodule_id, uri, n.centroid_mm, n.label, "semantics.json"});
      out.annotations.push_back({n.patient_id, n.nodule_id, describe(n, derive_seed(config.seed, {0x5e3u, p, k}))});
      truth << fmt::format("{},{},{},{:.4f},{},{}\n", n.patient_id, n.nodule_id, n.label, n.radius_mm,
                           n.spiculated ? 1 : 0, n.part_solid ? 1 : 0);
    }
  }
  semantics::save_annotations(out.annotations, out_dir / "semantics.json");
  out.manifest_path = out_dir / "manifest.csv";
  ingest::save_manifest(out.manifest, out.manifest_path);
  return out;
}

}  // namespace noduleclip::synth
