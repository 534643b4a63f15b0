#include "noduleclip/semantics/harmonize.hpp"

#include <algorithm>
#include <cmath>

#include "noduleclip/common/error.hpp"

namespace noduleclip::semantics {
namespace {

struct Range {
  double lo, hi;
};

const std::map<std::string, Range>& lidc_ranges() {
  static const std::map<std::string, Range> ranges = {
      {"internal_structure", {1, 4}}, {"calcification", {1, 6}}, {"sphericity", {1, 5}}, {"margin", {1, 5}},
      {"lobulation", {1, 5}},         {"spiculation", {1, 5}},   {"texture", {1, 5}},    {"subtlety", {1, 5}},
      {"malignancy", {1, 5}}};
  return ranges;
}

constexpr double kLidcAir = 4;
constexpr double kLidcNonCentral = 4;

}  // namespace

const std::vector<HarmonizationRule>& lidc_rules() {
  static const std::vector<HarmonizationRule> rules = {
      {"internal_structure", "= air", [](double v) { return v == kLidcAir; }, Feature::cyst_like_spaces, "Present"},
      {"internal_structure", "all others", [](double v) { return v != kLidcAir; }, Feature::cyst_like_spaces, "Absent"},
      {"calcification", "= non-central", [](double v) { return v == kLidcNonCentral; }, Feature::eccentric_calcification,
       "Present"},
      {"calcification", "all others", [](double v) { return v != kLidcNonCentral; }, Feature::eccentric_calcification,
       "Absent"},
      {"sphericity", "> 3", [](double v) { return v > 3; }, Feature::shape, "Round"},
      {"sphericity", "<= 3", [](double v) { return v <= 3; }, Feature::shape, "Ovoid"},
      {"margin", ">= 3", [](double v) { return v >= 3; }, Feature::margin_conspicuity, "Well marginated"},
      {"margin", "< 3", [](double v) { return v < 3; }, Feature::margin_conspicuity, "Poorly marginated"},
      {"lobulation", ">= 3", [](double v) { return v >= 3; }, Feature::margin, "Lobulated"},
      {"spiculation", ">= 3", [](double v) { return v >= 3; }, Feature::margin, "Spiculated"},
      {"texture", "> 4", [](double v) { return v > 4; }, Feature::consistency, "Solid"},
      {"texture", "in {2, 3, 4}", [](double v) { return v >= 2 && v <= 4; }, Feature::consistency, "Part-solid"},
      {"texture", "< 2", [](double v) { return v < 2; }, Feature::consistency, "Pure ground glass"},
  };
  return rules;
}

SemanticFeatureSet harmonize_lidc(const LidcRecord& record) {
  for (const auto& [name, value] : record) {
    auto it = lidc_ranges().find(name);
    if (it == lidc_ranges().end()) throw ValidationError("unknown LIDC feature '" + name + "'");
    if (!std::isfinite(value) || value < it->second.lo || value > it->second.hi) {
      throw ValidationError("LIDC " + name + " score out of range: " + std::to_string(value));
    }
  }
  SemanticFeatureSet out;
  for (const auto& rule : lidc_rules()) {
    auto it = record.find(rule.source_feature);
    if (it == record.end() || !rule.predicate(it->second)) continue;
    if (rule.target_feature == Feature::margin) {
      out.add_margin(rule.target_value);
    } else {
      out.set_category(rule.target_feature, rule.target_value);
    }
  }
  return out;
}

double aggregate_scores(std::vector<double> scores) {
  if (scores.empty()) throw ValidationError("cannot aggregate an empty list of reader scores");
  std::sort(scores.begin(), scores.end());
  return scores[(scores.size() - 1) / 2];
}

std::string aggregate_categories(const std::vector<std::string>& values) {
  if (values.empty()) throw ValidationError("cannot aggregate an empty list of reader values");
  std::map<std::string, int> counts;  // ordered: first max wins the tie
  for (const auto& v : values) ++counts[v];
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

}  // namespace noduleclip::semantics
