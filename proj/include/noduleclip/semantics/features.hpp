#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace noduleclip::semantics {

enum class Feature : int {
  longest_axial_diameter = 0,
  short_diameter,
  margin,
  consistency,
  shape,
  margin_conspicuity,
  reticulation,
  cyst_like_spaces,
  necrosis,
  eccentric_calcification,
  cavitation,
  intranodular_bronchiectasis,
  airway_cutoff,
  vascular_convergence,
  pleural_retraction,
  pleural_attachment,
  paracicatricial_emphysema,
  septal_stretching,
  level_of_suspicion,
};
inline constexpr int kNumFeatures = 19;

enum class FeatureKind { numeric, multi_category, category, binary };
enum class FeatureGroup { general, internal, external, assessment };

struct FeatureSpec {
  Feature id;
  std::string_view name;          // annotation-file key
  FeatureKind kind;
  FeatureGroup group;
  std::vector<std::string_view> classes;  // empty for numeric features
  std::string_view report_label;  // findings bullet label
  std::string_view phrase;        // lower-case noun phrase for impressions and zero-shot text
};

const std::vector<FeatureSpec>& feature_catalog();
const FeatureSpec& spec(Feature f);
// Case-insensitive lookup of an annotation-file key.
std::optional<Feature> find_feature(std::string_view name);
// Canonical spelling of a class of `f`, matched case-insensitively.
std::optional<std::string> canonical_class(Feature f, std::string_view value);

// Lower-cased words of every class name; text augmentation never rewrites them.
std::vector<std::string> protected_class_words();

inline constexpr std::string_view kPresent = "Present";
inline constexpr std::string_view kAbsent = "Absent";

using SlotValue = std::variant<std::monostate, double, std::string, std::vector<std::string>>;

// One slot per feature; std::monostate marks MISSING (un-annotated or N/A).
class SemanticFeatureSet {
 public:
  bool missing(Feature f) const { return std::holds_alternative<std::monostate>(slots_[index(f)]); }
  double number(Feature f) const;
  const std::string& category(Feature f) const;
  // Margin classes in vocabulary order.
  const std::vector<std::string>& margins() const;

  void set_missing(Feature f) { slots_[index(f)] = std::monostate{}; }
  void set_number(Feature f, double mm);
  void set_category(Feature f, std::string_view value);
  void set_binary(Feature f, bool present) { set_category(f, present ? kPresent : kAbsent); }
  void add_margin(std::string_view value);

  int present_count() const;
  // (feature name, value) pairs for every present slot: one pair per margin
  // class, diameters binned to 10 mm.
  std::vector<std::pair<std::string, std::string>> feature_values() const;

  bool operator==(const SemanticFeatureSet&) const = default;

 private:
  static std::size_t index(Feature f) { return static_cast<std::size_t>(f); }
  std::array<SlotValue, kNumFeatures> slots_{};
};

struct AnnotatedNodule {
  std::string patient_id;
  std::string nodule_id;
  SemanticFeatureSet features;
};

// JSON array of {"patient_id", "nodule_id", "features": {<name>: value}}.
// Diameters are numbers, margin a list of classes, everything else a class
// string; null or "N/A" marks MISSING. A single object is also accepted.
std::vector<AnnotatedNodule> load_annotations(const std::filesystem::path& path);
void save_annotations(const std::vector<AnnotatedNodule>& nodules, const std::filesystem::path& path);
SemanticFeatureSet features_from_json(const nlohmann::json& features);
nlohmann::json features_to_json(const SemanticFeatureSet& features);

}  // namespace noduleclip::semantics
