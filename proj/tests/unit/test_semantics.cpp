#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "noduleclip/common/error.hpp"
#include "noduleclip/semantics/features.hpp"
#include "noduleclip/semantics/harmonize.hpp"
#include "noduleclip/semantics/prompts.hpp"
#include "noduleclip/semantics/report.hpp"
#include "noduleclip/semantics/text_augment.hpp"
#include "support/fixtures.hpp"

using namespace noduleclip;
using namespace noduleclip::semantics;

namespace {

bool contains(const std::string& haystack, std::string_view needle) { return haystack.find(needle) != std::string::npos; }

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// The worked report example, restricted to classes in the feature vocabulary.
SemanticFeatureSet example_features() {
  return features_from_json(nlohmann::json::parse(R"({
    "Longest Axial Diameter": 17.0,
    "Short Diameter": 5.1,
    "Nodule Margin": ["Ill-defined", "Spiculated"],
    "Nodule Shape": "Irregular",
    "Nodule Consistency": "Part-solid",
    "Nodule Reticulation": "Present",
    "Cyst-like Spaces": "Absent",
    "Intra-nodular Bronchiectasis": "Absent",
    "Necrosis": "Absent",
    "Cavitation": "Absent",
    "Eccentric Calcification": "Absent",
    "Airway Cutoff": "Absent",
    "Pleural Attachment": "Present",
    "Pleural Retraction": "Present",
    "Vascular Convergence": "Present",
    "Septal Stretching": "Present",
    "Paracicatricial Emphysema": "Absent",
    "Level of Suspicion of Lung Cancer": "Moderately High"
  })"));
}

SemanticFeatureSet random_features(Rng& rng) {
  SemanticFeatureSet s;
  for (const auto& f : feature_catalog()) {
    if (rng.bernoulli(0.3)) continue;
    switch (f.kind) {
      case FeatureKind::numeric: s.set_number(f.id, rng.uniform(1.0, 40.0)); break;
      case FeatureKind::multi_category:
        for (const auto& c : f.classes) {
          if (rng.bernoulli(0.4)) s.add_margin(c);
        }
        break;
      default: s.set_category(f.id, f.classes[rng.index(f.classes.size())]);
    }
  }
  if (s.present_count() == 0) s.set_binary(Feature::necrosis, true);
  return s;
}

}  // namespace

TEST(Features, CatalogHasNineteenSlotsInFourGroups) {
  EXPECT_EQ(feature_catalog().size(), static_cast<std::size_t>(kNumFeatures));
  std::set<std::string_view> names;
  for (const auto& f : feature_catalog()) {
    names.insert(f.name);
    EXPECT_EQ(&spec(f.id), &f);
    EXPECT_EQ(f.classes.empty(), f.kind == FeatureKind::numeric);
  }
  EXPECT_EQ(names.size(), feature_catalog().size());
  EXPECT_EQ(find_feature("nodule consistency"), Feature::consistency);
  EXPECT_FALSE(find_feature("Axial location").has_value());
  EXPECT_EQ(canonical_class(Feature::consistency, "PART-SOLID"), "Part-solid");
  EXPECT_FALSE(canonical_class(Feature::consistency, "Serrated").has_value());
}

TEST(Features, SlotValidation) {
  SemanticFeatureSet s;
  EXPECT_TRUE(s.missing(Feature::margin));
  EXPECT_THROW(s.set_number(Feature::short_diameter, -1.0), ValidationError);
  EXPECT_THROW(s.set_number(Feature::shape, 3.0), ValidationError);
  EXPECT_THROW(s.set_category(Feature::shape, "Spiculated"), ValidationError);
  EXPECT_THROW(s.add_margin("Round"), ValidationError);
  s.add_margin("Spiculated");
  s.add_margin("smooth");
  s.add_margin("Spiculated");
  EXPECT_EQ(s.margins(), (std::vector<std::string>{"Smooth", "Spiculated"}));
  EXPECT_THROW(s.category(Feature::necrosis), ValidationError);
}

TEST(Features, FeatureValuesBinDiameters) {
  SemanticFeatureSet s;
  s.set_number(Feature::longest_axial_diameter, 17.0);
  s.add_margin("Lobulated");
  s.add_margin("Spiculated");
  s.set_binary(Feature::necrosis, false);
  const auto fv = s.feature_values();
  const std::vector<std::pair<std::string, std::string>> expected{{"Longest Axial Diameter", "10-20"},
                                                                  {"Nodule Margin", "Lobulated"},
                                                                  {"Nodule Margin", "Spiculated"},
                                                                  {"Necrosis", "Absent"}};
  EXPECT_EQ(fv, expected);
}

TEST(Features, JsonRoundTripAndMissingMarkers) {
  const auto dir = nc_test::temp_dir("annotations");
  Rng rng(1);
  std::vector<AnnotatedNodule> nodules;
  for (int i = 0; i < 20; ++i) nodules.push_back({"P" + std::to_string(i), "N0", random_features(rng)});
  save_annotations(nodules, dir / "a.json");
  const auto back = load_annotations(dir / "a.json");
  ASSERT_EQ(back.size(), nodules.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].patient_id, nodules[i].patient_id);
    EXPECT_EQ(back[i].features, nodules[i].features);
  }
  const auto s = features_from_json(nlohmann::json::parse(R"({"Necrosis": "N/A", "Cavitation": null})"));
  EXPECT_TRUE(s.missing(Feature::necrosis));
  EXPECT_TRUE(s.missing(Feature::cavitation));
  EXPECT_THROW(features_from_json(nlohmann::json::parse(R"({"Axial location": "Central"})")), ValidationError);
  EXPECT_THROW(features_from_json(nlohmann::json::parse(R"({"Necrosis": 1})")), ValidationError);
}

TEST(Harmonize, TableRows) {
  EXPECT_EQ(harmonize_lidc({{"sphericity", 4}}).category(Feature::shape), "Round");
  EXPECT_EQ(harmonize_lidc({{"sphericity", 3}}).category(Feature::shape), "Ovoid");
  EXPECT_EQ(harmonize_lidc({{"texture", 3}}).category(Feature::consistency), "Part-solid");
  EXPECT_EQ(harmonize_lidc({{"texture", 5}}).category(Feature::consistency), "Solid");
  EXPECT_EQ(harmonize_lidc({{"texture", 1}}).category(Feature::consistency), "Pure ground glass");
  EXPECT_EQ(harmonize_lidc({{"margin", 3}}).category(Feature::margin_conspicuity), "Well marginated");
  EXPECT_EQ(harmonize_lidc({{"margin", 2}}).category(Feature::margin_conspicuity), "Poorly marginated");
  EXPECT_EQ(harmonize_lidc({{"internal_structure", 4}}).category(Feature::cyst_like_spaces), "Present");
  EXPECT_EQ(harmonize_lidc({{"internal_structure", 1}}).category(Feature::cyst_like_spaces), "Absent");
  EXPECT_EQ(harmonize_lidc({{"calcification", 4}}).category(Feature::eccentric_calcification), "Present");
  EXPECT_EQ(harmonize_lidc({{"calcification", 6}}).category(Feature::eccentric_calcification), "Absent");
  EXPECT_EQ(harmonize_lidc({{"lobulation", 3}, {"spiculation", 5}}).margins(),
            (std::vector<std::string>{"Lobulated", "Spiculated"}));
  EXPECT_TRUE(harmonize_lidc({{"lobulation", 2}, {"spiculation", 2}}).missing(Feature::margin));
}

TEST(Harmonize, NlstOnlySlotsStayMissingAndInputsValidated) {
  Rng rng(2);
  const std::set<Feature> mapped{Feature::shape,      Feature::consistency,     Feature::margin_conspicuity,
                                 Feature::margin,     Feature::cyst_like_spaces, Feature::eccentric_calcification};
  for (int trial = 0; trial < 200; ++trial) {
    LidcRecord r{{"internal_structure", 1.0 + static_cast<double>(rng.index(4))},
                 {"calcification", 1.0 + static_cast<double>(rng.index(6))},
                 {"subtlety", 3},
                 {"malignancy", 5}};
    for (const char* k : {"sphericity", "margin", "lobulation", "spiculation", "texture"}) {
      r[k] = 1.0 + static_cast<double>(rng.index(5));
    }
    const auto s = harmonize_lidc(r);
    for (const auto& f : feature_catalog()) {
      if (!mapped.contains(f.id)) EXPECT_TRUE(s.missing(f.id)) << f.name;
      else if (f.id != Feature::margin) EXPECT_FALSE(s.missing(f.id)) << f.name;
    }
  }
  for (const auto& rule : lidc_rules()) {
    if (rule.target_feature == Feature::margin) {
      EXPECT_TRUE(canonical_class(Feature::margin, rule.target_value).has_value());
    } else {
      EXPECT_EQ(canonical_class(rule.target_feature, rule.target_value), rule.target_value);
    }
  }
  EXPECT_THROW(harmonize_lidc({{"sphericity", 6}}), ValidationError);
  EXPECT_THROW(harmonize_lidc({{"roundness", 3}}), ValidationError);
}

TEST(Aggregate, LowerMedianAndMode) {
  EXPECT_EQ(aggregate_scores({3, 4, 5}), 4);
  EXPECT_EQ(aggregate_scores({4, 3}), 3);
  EXPECT_EQ(aggregate_scores({2, 2, 5}), 2);
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(1 + rng.index(8));
    for (auto& x : v) x = 1.0 + static_cast<double>(rng.index(5));
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(aggregate_scores(v), sorted[(sorted.size() - 1) / 2]);
  }
  EXPECT_EQ(aggregate_categories({"Solid", "Part-solid", "Solid"}), "Solid");
  EXPECT_EQ(aggregate_categories({"Solid", "Part-solid"}), "Part-solid");
  EXPECT_THROW(aggregate_scores({}), ValidationError);
  EXPECT_THROW(aggregate_categories({}), ValidationError);
}

TEST(Report, WorkedExample) {
  Rng rng(4);
  const auto r = render_report(example_features(), rng);
  const auto text = r.text();
  EXPECT_TRUE(contains(text, "- Nodule consistency: Part-solid"));
  EXPECT_TRUE(contains(text, "- Nodule margins: Spiculated, Ill-defined"));
  EXPECT_TRUE(contains(r.impression, "spiculated"));
  EXPECT_TRUE(contains(r.impression, "spiculated, ill-defined margins"));
  EXPECT_TRUE(contains(r.impression, "17.0 × 5.1 mm"));
  EXPECT_TRUE(contains(r.impression, "The level of suspicion for lung cancer is moderately high."));
  EXPECT_TRUE(contains(r.impression, "pleural attachment"));
  EXPECT_FALSE(contains(r.impression, "necrosis"));
  EXPECT_FALSE(contains(r.impression, "cavitation"));
  EXPECT_EQ(r.findings.size(), 18u);
  EXPECT_EQ(NoduleReport::parse(text).findings, r.findings);
  EXPECT_EQ(NoduleReport::parse(text).impression, r.impression);
}

TEST(Report, SingleFeature) {
  SemanticFeatureSet s;
  s.set_category(Feature::consistency, "Solid");
  Rng rng(5);
  const auto r = render_report(s, rng);
  EXPECT_EQ(r.findings, std::vector<std::string>{"- Nodule consistency: Solid"});
  EXPECT_EQ(r.impression, "A solid nodule is identified.");
  EXPECT_THROW(render_report(SemanticFeatureSet{}, rng), ValidationError);
}

TEST(Report, SoundnessOnRandomSets) {
  Rng rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    const auto s = random_features(rng);
    const auto r = render_report(s, rng);
    const auto text = r.text();
    for (const auto& f : feature_catalog()) {
      const std::string label = "- " + std::string(f.report_label) + ":";
      const auto n = std::count_if(r.findings.begin(), r.findings.end(),
                                   [&](const std::string& b) { return b.rfind(label, 0) == 0; });
      EXPECT_EQ(n, s.missing(f.id) ? 0 : 1) << f.name;
      if (s.missing(f.id)) EXPECT_FALSE(contains(text, f.report_label)) << f.name;
      if (f.kind == FeatureKind::binary && !s.missing(f.id) && s.category(f.id) == kAbsent) {
        EXPECT_FALSE(contains(lower(r.impression), f.phrase)) << f.name << ": " << r.impression;
      }
    }
    EXPECT_FALSE(contains(lower(r.impression), "absent"));
    EXPECT_FALSE(contains(lower(r.impression), " no "));
  }
}

TEST(Report, FindingsOrderIsShuffled) {
  Rng rng(7);
  std::set<std::string> firsts;
  for (int i = 0; i < 50; ++i) firsts.insert(render_report(example_features(), rng).findings.front());
  EXPECT_GT(firsts.size(), 5u);
}

TEST(Report, TrainingTextSelection) {
  Rng rng(8);
  const auto r = render_report(example_features(), rng);
  EXPECT_EQ(select_training_text(r, 1), r.impression);
  EXPECT_EQ(select_training_text(r, 0), r.joined_findings());
  int impressions = 0;
  for (int i = 0; i < 10000; ++i) impressions += select_training_text(r, rng) == r.impression;
  EXPECT_NEAR(impressions / 10000.0, 0.5, 0.02);
}

TEST(TextAugment, ZeroConfigIsIdentity) {
  Rng rng(9);
  const std::string text = "A 17.0 mm part-solid nodule is identified.";
  EXPECT_EQ(augment_text(text, TextAugmentConfig::none(), rng), text);
}

TEST(TextAugment, CropBoundsAndDeterminism) {
  const std::string text = "The nodule demonstrates spiculated margins and is associated with pleural attachment.";
  const auto n = split_whitespace(text).size();
  const TextAugmentConfig crop_only{0.0, 1.0, 0.6};
  Rng rng(10);
  for (int i = 0; i < 200; ++i) {
    const auto out = augment_text(text, crop_only, rng);
    const auto k = split_whitespace(out).size();
    EXPECT_GE(k, static_cast<std::size_t>(std::ceil(0.6 * n)));
    EXPECT_LE(k, n);
    EXPECT_TRUE(contains(text, out)) << out;
  }
  const TextAugmentConfig cfg;
  Rng a(11), b(11);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(augment_text(text, cfg, a), augment_text(text, cfg, b));
}

TEST(TextAugment, SynonymsPreserveProtectedWordsAndFormatting) {
  const auto& table = SynonymTable::builtin();
  EXPECT_EQ(table.version(), "synonyms-v1");
  const TextAugmentConfig syn_only{1.0, 0.0, 1.0};
  Rng rng(12);
  const std::string text = "Nodule demonstrates spiculated, lobulated margins; part-solid consistency.";
  bool changed = false;
  for (int i = 0; i < 50; ++i) {
    const auto out = augment_text(text, syn_only, rng);
    changed |= out != text;
    for (const auto* word : {"spiculated,", "lobulated", "part-solid"}) EXPECT_TRUE(contains(out, word)) << out;
    EXPECT_TRUE(std::isupper(static_cast<unsigned char>(out[0]))) << out;
    EXPECT_EQ(out.back(), '.');
    EXPECT_TRUE(contains(out, ";")) << out;
  }
  EXPECT_TRUE(changed);
  const auto protected_words = protected_class_words();
  for (const auto& [key, values] : table.entries()) {
    EXPECT_EQ(std::count(protected_words.begin(), protected_words.end(), key), 0) << key;
    for (const auto& v : values) EXPECT_EQ(std::count(protected_words.begin(), protected_words.end(), v), 0) << v;
  }
}

TEST(TextAugment, TableRejectsProtectedWords) {
  EXPECT_THROW(SynonymTable("v", {{"spiculated", {"spiky"}}}), ValidationError);
  EXPECT_THROW(SynonymTable("v", {{"edge", {"solid"}}}), ValidationError);
  EXPECT_THROW(SynonymTable("v", {{"edge", {}}}), ValidationError);
  EXPECT_THROW(SynonymTable::parse("{\"version\": 1}"), ValidationError);
  TextAugmentConfig bad;
  bad.min_keep_ratio = 0.0;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Prompts, CategoricalAndBinaryTemplates) {
  const auto margin = zero_shot_prompts(Feature::margin, {"Spiculated", "Smooth"});
  EXPECT_EQ(margin.sentences,
            (std::vector<std::string>{"This nodule margin is spiculated.", "This nodule margin is smooth."}));
  const auto necrosis = zero_shot_prompts(Feature::necrosis);
  EXPECT_EQ(necrosis.sentences, (std::vector<std::string>{"There is necrosis.", "No findings."}));
  EXPECT_EQ(necrosis.classes, (std::vector<std::string>{"Present", "Absent"}));
  EXPECT_EQ(zero_shot_prompts(Feature::consistency).sentences.size(), 5u);
  EXPECT_THROW(zero_shot_prompts(Feature::short_diameter), ValidationError);
  EXPECT_THROW(zero_shot_prompts(Feature::margin, {"Spiculated"}), ValidationError);
  EXPECT_THROW(zero_shot_prompts(Feature::margin, {"Spiculated", "Round"}), ValidationError);
  EXPECT_EQ(all_zero_shot_prompts().size(), static_cast<std::size_t>(kNumFeatures - 2));
}
