#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "noduleclip/semantics/features.hpp"

namespace noduleclip::semantics {

// LIDC characteristic names accepted by harmonize_lidc, with their code ranges:
//   internal_structure 1-4 (4 = air), calcification 1-6 (4 = non-central),
//   sphericity, margin, lobulation, spiculation, texture 1-5.
// subtlety (1-5) and malignancy (1-5) are recognised and ignored.
using LidcRecord = std::map<std::string, double>;

struct HarmonizationRule {
  std::string source_feature;
  std::string description;  // predicate in words, e.g. "> 3"
  std::function<bool(double)> predicate;
  Feature target_feature;
  std::string target_value;
};

// The LIDC -> NLST mapping, one rule per (predicate, target) row.
const std::vector<HarmonizationRule>& lidc_rules();

// Applies lidc_rules(); every slot with no LIDC counterpart stays MISSING.
SemanticFeatureSet harmonize_lidc(const LidcRecord& record);

// Lower median of numeric reader scores.
double aggregate_scores(std::vector<double> scores);
// Most frequent class; ties go to the lexicographically smallest class.
std::string aggregate_categories(const std::vector<std::string>& values);

}  // namespace noduleclip::semantics
