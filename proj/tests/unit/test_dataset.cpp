#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "noduleclip/common/error.hpp"
#include "noduleclip/dataset.hpp"
#include "noduleclip/preprocess/view_cache.hpp"
#include "noduleclip/semantics/report.hpp"
#include "noduleclip/synth.hpp"
#include "support/fixtures.hpp"

using namespace noduleclip;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

synth::SynthConfig small_cohort(std::uint64_t seed = 3) {
  synth::SynthConfig c;
  c.n_patients = 10;
  c.seed = seed;
  return c;
}

// One synthetic cohort shared by the tests in this file.
const synth::SynthOutput& shared_cohort() {
  static const synth::SynthOutput out = synth::write_cohort(small_cohort(), nc_test::temp_dir("dataset_cohort"));
  return out;
}

dataset::LoadOptions load_opts(bool load_volumes = true) {
  dataset::LoadOptions o;
  o.image_size = 64;
  o.load_volumes = load_volumes;
  return o;
}

}  // namespace

TEST(Synth, SamplingFollowsTheGeneratorRules) {
  synth::SynthConfig c;
  c.seed = 9;
  const auto patients = synth::sample_patients(c);
  ASSERT_EQ(patients.size(), 56u);
  int nodules = 0;
  int spic = 0, spic_pos = 0, smooth = 0, smooth_pos = 0;
  for (const auto& p : patients) {
    for (const auto& n : p.nodules) {
      ++nodules;
      if (n.label) {
        EXPECT_GE(n.radius_mm, 7.0);
        EXPECT_LT(n.radius_mm, 11.0);
      } else {
        EXPECT_GE(n.radius_mm, 3.0);
        EXPECT_LT(n.radius_mm, 6.5);
      }
      EXPECT_EQ(n.spiculated, !n.spikes.empty());
      (n.spiculated ? spic : smooth) += 1;
      (n.spiculated ? spic_pos : smooth_pos) += n.label;
    }
  }
  EXPECT_GE(nodules, 64);
  ASSERT_GT(spic, 0);
  ASSERT_GT(smooth, 0);
  EXPECT_GT(static_cast<double>(spic_pos) / spic, static_cast<double>(smooth_pos) / smooth);
  EXPECT_THROW(synth::sample_patients({9, 1, 0.4, 4}), ValidationError);
}

TEST(Synth, RenderedIntensitiesMatchTheMorphology) {
  synth::SynthPatient p;
  p.patient_id = "P";
  synth::SynthNodule n;
  n.radius_mm = 8.0;
  n.centroid_mm = {0.0, 0.0, 0.0};
  p.nodules.push_back(n);
  const auto v = synth::render_volume(p, 1);
  const auto centre = v.to_voxel({0.0, 0.0, 0.0});
  const int cx = static_cast<int>(std::lround(centre[0])), cy = static_cast<int>(std::lround(centre[1])),
            cz = static_cast<int>(std::lround(centre[2]));
  EXPECT_NEAR(v.at(cx, cy, cz), 40.0, 100.0);
  EXPECT_NEAR(v.at(2, 2, 2), -850.0, 100.0);
  // The boundary sits near the radius: 6 mm inside is tissue, 10 mm out is air.
  const int inside = static_cast<int>(std::lround(6.0 / v.spacing_mm[0]));
  const int outside = static_cast<int>(std::lround(10.0 / v.spacing_mm[0]));
  EXPECT_GT(v.at(cx + inside, cy, cz), -200.0);
  EXPECT_LT(v.at(cx + outside, cy, cz), -600.0);
}

TEST(Synth, DescriptionsAgreeWithMorphologyAndVocabulary) {
  const auto& out = shared_cohort();
  ASSERT_EQ(out.annotations.size(), out.manifest.records.size());
  std::size_t k = 0;
  for (const auto& p : out.patients) {
    for (const auto& n : p.nodules) {
      const auto& f = out.annotations[k++].features;
      ASSERT_EQ(f.margins().size(), 1u);
      EXPECT_EQ(f.margins().front(), n.spiculated ? "Spiculated" : "Smooth");
      EXPECT_EQ(f.category(semantics::Feature::consistency), n.part_solid ? "Part-solid" : "Solid");
      EXPECT_GT(f.number(semantics::Feature::longest_axial_diameter),
                f.number(semantics::Feature::short_diameter) - 1e-9);
    }
  }
  // Saved annotations reload through the vocabulary-checking parser.
  const auto reloaded = semantics::load_annotations(out.manifest.base_dir / "semantics.json");
  ASSERT_EQ(reloaded.size(), out.annotations.size());
  for (std::size_t i = 0; i < reloaded.size(); ++i) EXPECT_EQ(reloaded[i].features, out.annotations[i].features);
  EXPECT_NO_THROW(ingest::validate(ingest::load_manifest(out.manifest_path)));
}

TEST(Synth, FixedSeedGivesByteIdenticalFiles) {
  const auto a = nc_test::temp_dir("synth_a"), b = nc_test::temp_dir("synth_b");
  synth::write_cohort(small_cohort(21), a);
  synth::write_cohort(small_cohort(21), b);
  int compared = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a);
    EXPECT_EQ(slurp(entry.path()), slurp(b / rel)) << rel;
    ++compared;
  }
  EXPECT_EQ(compared, 10 + 3);  // volumes, semantics, truth, manifest
}

TEST(Dataset, LoadJoinsRecordsVolumesAndAnnotations) {
  const auto& out = shared_cohort();
  const auto cohort = dataset::load_cohort(ingest::load_manifest(out.manifest_path), load_opts());
  ASSERT_EQ(cohort.size(), out.manifest.records.size());
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& s = cohort[i];
    EXPECT_TRUE(s.annotated);
    EXPECT_EQ(s.features, out.annotations[i].features);
    EXPECT_EQ(s.eval_stack.size, 64);
    ASSERT_TRUE(s.volume);
    EXPECT_EQ(s.volume->spacing_mm, (Vec3{1.0, 1.0, 1.0}));
    if (i > 0 && cohort[i - 1].patient_id == s.patient_id) {
      EXPECT_EQ(cohort[i - 1].volume.get(), s.volume.get());
    }
  }
  // Evaluation stacks follow the deterministic path.
  const auto& s0 = cohort[0];
  const auto expected = preprocess::to_model_input(
      preprocess::slice_nine_planes(preprocess::clip_normalize(preprocess::crop_nodule(*s0.volume, s0.centroid_mm))),
      {}, 64);
  EXPECT_EQ(0, std::memcmp(expected.data.data(), s0.eval_stack.data.data(), expected.data.size() * sizeof(float)));
  EXPECT_EQ(cohort.patients().size(), 10u);
  EXPECT_EQ(cohort.indices_for({cohort[0].patient_id}).front(), 0u);
}

TEST(Dataset, ZeroAugmentationReproducesTheEvalStack) {
  const auto& out = shared_cohort();
  const auto cohort = dataset::load_cohort(ingest::load_manifest(out.manifest_path), load_opts());
  Rng rng(4);
  const auto s = dataset::augmented_stack(cohort[1], preprocess::AugmentationConfig::none(), rng, 64);
  ASSERT_EQ(s.data.size(), cohort[1].eval_stack.data.size());
  EXPECT_EQ(0, std::memcmp(s.data.data(), cohort[1].eval_stack.data.data(), s.data.size() * sizeof(float)));
}

TEST(Dataset, TrainingTextIsSeededAndDrawnFromTheReport) {
  const auto& out = shared_cohort();
  const auto cohort = dataset::load_cohort(ingest::load_manifest(out.manifest_path), load_opts(false));
  Rng a(8), b(8);
  const auto t1 = dataset::training_text(cohort[0], {}, a);
  EXPECT_EQ(t1, dataset::training_text(cohort[0], {}, b));
  Rng c(8);
  const auto report = semantics::render_report(cohort[0].features, c);
  const auto plain = semantics::select_training_text(report, c);
  Rng d(8);
  EXPECT_EQ(dataset::training_text(cohort[0], semantics::TextAugmentConfig::none(), d), plain);
}

TEST(Dataset, CachedStacksAreUsedAndMissingVolumesNamed) {
  const auto& out = shared_cohort();
  auto manifest = ingest::load_manifest(out.manifest_path);
  const auto cache = nc_test::temp_dir("dataset_cache");
  const auto& r = manifest.records[0];
  preprocess::ViewCacheEntry entry{r.patient_id, r.nodule_id, nc_test::random_stack(64, 5)};
  preprocess::save_view_stack(entry, cache / preprocess::cache_stem(r.patient_id, r.nodule_id));

  auto opts = load_opts(false);
  opts.view_cache = cache;
  const auto cohort = dataset::load_cohort(manifest, opts);
  EXPECT_EQ(cohort[0].eval_stack.data, entry.stack.data);
  EXPECT_FALSE(cohort[0].volume);
  EXPECT_TRUE(cohort[1].volume);  // not cached, so read from disk

  opts.image_size = 32;
  EXPECT_THROW(dataset::load_cohort(manifest, opts), ValidationError);

  manifest.records[2].volume_uri = "volumes/absent.nii.gz";
  try {
    dataset::load_cohort(manifest, load_opts());
    FAIL();
  } catch (const RuntimeFailure& e) {
    EXPECT_NE(std::string(e.what()).find(manifest.records[2].patient_id), std::string::npos);
  }
}
