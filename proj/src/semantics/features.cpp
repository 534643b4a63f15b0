#include "noduleclip/semantics/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "noduleclip/common/error.hpp"

namespace noduleclip::semantics {
namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

std::vector<FeatureSpec> build_catalog() {
  using K = FeatureKind;
  using G = FeatureGroup;
  const std::vector<std::string_view> binary = {kPresent, kAbsent};
  return {
      {Feature::longest_axial_diameter, "Longest Axial Diameter", K::numeric, G::general, {},
       "Longest axial diameter (mm)", "longest axial diameter"},
      {Feature::short_diameter, "Short Diameter", K::numeric, G::general, {}, "Short diameter (mm)", "short diameter"},
      {Feature::margin, "Nodule Margin", K::multi_category, G::general,
       {"Smooth", "Lobulated", "Spiculated", "Ill-defined", "Notched"}, "Nodule margins", "margin"},
      {Feature::consistency, "Nodule Consistency", K::category, G::general,
       {"Peri-cystic", "Solid", "Pure ground glass", "Semiconsolidation", "Part-solid"}, "Nodule consistency",
       "consistency"},
      {Feature::shape, "Nodule Shape", K::category, G::general, {"Irregular", "Ovoid", "Polygonal", "Round"},
       "Nodule shape", "shape"},
      {Feature::margin_conspicuity, "Nodule Margin Conspicuity", K::category, G::general,
       {"Well marginated", "Poorly marginated"}, "Nodule margin conspicuity", "margin conspicuity"},
      {Feature::reticulation, "Nodule Reticulation", K::binary, G::internal, binary, "Nodule reticulation",
       "reticulation"},
      {Feature::cyst_like_spaces, "Cyst-like Spaces", K::binary, G::internal, binary, "Cyst-like spaces",
       "cyst-like spaces"},
      {Feature::necrosis, "Necrosis", K::binary, G::internal, binary, "Necrosis", "necrosis"},
      {Feature::eccentric_calcification, "Eccentric Calcification", K::binary, G::internal, binary,
       "Eccentric calcification", "eccentric calcification"},
      {Feature::cavitation, "Cavitation", K::binary, G::internal, binary, "Cavitation", "cavitation"},
      {Feature::intranodular_bronchiectasis, "Intra-nodular Bronchiectasis", K::binary, G::internal, binary,
       "Intra nodular bronchiectasis", "intra-nodular bronchiectasis"},
      {Feature::airway_cutoff, "Airway Cutoff", K::binary, G::internal, binary, "Airway cutoff", "airway cutoff"},
      {Feature::vascular_convergence, "Vascular Convergence", K::binary, G::external, binary, "Vascular convergence",
       "vascular convergence"},
      {Feature::pleural_retraction, "Pleural Retraction", K::binary, G::external, binary, "Pleural retraction",
       "pleural retraction"},
      {Feature::pleural_attachment, "Pleural Attachment", K::binary, G::external, binary, "Pleural attachment",
       "pleural attachment"},
      {Feature::paracicatricial_emphysema, "Paracicatricial Emphysema", K::binary, G::external, binary,
       "Paracicatricial emphysema", "paracicatricial emphysema"},
      {Feature::septal_stretching, "Septal Stretching", K::binary, G::external, binary, "Septal stretching",
       "septal stretching"},
      {Feature::level_of_suspicion, "Level of Suspicion of Lung Cancer", K::category, G::assessment,
       {"Very Low", "Moderately Low", "Intermediate", "Moderately High", "High"}, "Level of suspicion for lung cancer",
       "level of suspicion"},
  };
}

std::string diameter_bin(double mm) {
  const int lo = static_cast<int>(std::floor(mm / 10.0)) * 10;
  return std::to_string(lo) + "-" + std::to_string(lo + 10);
}

bool is_missing_marker(const nlohmann::json& v) {
  return v.is_null() || (v.is_string() && (iequals(v.get<std::string>(), "N/A") || v.get<std::string>().empty()));
}

}  // namespace

const std::vector<FeatureSpec>& feature_catalog() {
  static const std::vector<FeatureSpec> catalog = build_catalog();
  return catalog;
}

const FeatureSpec& spec(Feature f) { return feature_catalog()[static_cast<std::size_t>(f)]; }

std::optional<Feature> find_feature(std::string_view name) {
  for (const auto& s : feature_catalog()) {
    if (iequals(s.name, name)) return s.id;
  }
  return std::nullopt;
}

std::optional<std::string> canonical_class(Feature f, std::string_view value) {
  for (auto c : spec(f).classes) {
    if (iequals(c, value)) return std::string(c);
  }
  return std::nullopt;
}

std::vector<std::string> protected_class_words() {
  std::set<std::string> words;
  for (const auto& s : feature_catalog()) {
    for (auto c : s.classes) {
      std::string w;
      for (char ch : c) {
        if (ch == ' ') {
          if (!w.empty()) words.insert(w);
          w.clear();
        } else {
          w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
      }
      if (!w.empty()) words.insert(w);
    }
  }
  return {words.begin(), words.end()};
}

double SemanticFeatureSet::number(Feature f) const {
  if (const auto* v = std::get_if<double>(&slots_[index(f)])) return *v;
  throw ValidationError(std::string(spec(f).name) + " is not a present numeric feature");
}

const std::string& SemanticFeatureSet::category(Feature f) const {
  if (const auto* v = std::get_if<std::string>(&slots_[index(f)])) return *v;
  throw ValidationError(std::string(spec(f).name) + " is not a present categorical feature");
}

const std::vector<std::string>& SemanticFeatureSet::margins() const {
  if (const auto* v = std::get_if<std::vector<std::string>>(&slots_[index(Feature::margin)])) return *v;
  throw ValidationError("Nodule Margin is missing");
}

void SemanticFeatureSet::set_number(Feature f, double mm) {
  if (spec(f).kind != FeatureKind::numeric) throw ValidationError(std::string(spec(f).name) + " is not numeric");
  if (!std::isfinite(mm) || mm < 0.0) throw ValidationError(std::string(spec(f).name) + " must be a finite value >= 0");
  slots_[index(f)] = mm;
}

void SemanticFeatureSet::set_category(Feature f, std::string_view value) {
  const auto& s = spec(f);
  if (s.kind == FeatureKind::numeric) throw ValidationError(std::string(s.name) + " is numeric");
  const auto canon = canonical_class(f, value);
  if (!canon) throw ValidationError("'" + std::string(value) + "' is not a class of " + std::string(s.name));
  if (s.kind == FeatureKind::multi_category) {
    slots_[index(f)] = std::vector<std::string>{*canon};
  } else {
    slots_[index(f)] = *canon;
  }
}

void SemanticFeatureSet::add_margin(std::string_view value) {
  const auto canon = canonical_class(Feature::margin, value);
  if (!canon) throw ValidationError("'" + std::string(value) + "' is not a class of Nodule Margin");
  std::vector<std::string> current;
  if (const auto* v = std::get_if<std::vector<std::string>>(&slots_[index(Feature::margin)])) current = *v;
  if (std::find(current.begin(), current.end(), *canon) != current.end()) return;
  current.push_back(*canon);
  const auto& order = spec(Feature::margin).classes;
  std::sort(current.begin(), current.end(), [&](const std::string& a, const std::string& b) {
    return std::find(order.begin(), order.end(), a) < std::find(order.begin(), order.end(), b);
  });
  slots_[index(Feature::margin)] = std::move(current);
}

int SemanticFeatureSet::present_count() const {
  int n = 0;
  for (const auto& s : slots_) n += std::holds_alternative<std::monostate>(s) ? 0 : 1;
  return n;
}

std::vector<std::pair<std::string, std::string>> SemanticFeatureSet::feature_values() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : feature_catalog()) {
    const auto& slot = slots_[index(s.id)];
    const std::string name(s.name);
    if (const auto* d = std::get_if<double>(&slot)) {
      out.emplace_back(name, diameter_bin(*d));
    } else if (const auto* c = std::get_if<std::string>(&slot)) {
      out.emplace_back(name, *c);
    } else if (const auto* m = std::get_if<std::vector<std::string>>(&slot)) {
      for (const auto& v : *m) out.emplace_back(name, v);
    }
  }
  return out;
}

SemanticFeatureSet features_from_json(const nlohmann::json& features) {
  if (!features.is_object()) throw ValidationError("semantic features must be a JSON object");
  SemanticFeatureSet out;
  for (const auto& [key, value] : features.items()) {
    const auto f = find_feature(key);
    if (!f) throw ValidationError("unknown semantic feature '" + key + "'");
    if (is_missing_marker(value)) continue;
    const auto& s = spec(*f);
    switch (s.kind) {
      case FeatureKind::numeric:
        if (!value.is_number()) throw ValidationError(key + " must be a number");
        out.set_number(*f, value.get<double>());
        break;
      case FeatureKind::multi_category:
        if (value.is_string()) {
          out.add_margin(value.get<std::string>());
        } else if (value.is_array()) {
          for (const auto& m : value) {
            if (!m.is_string()) throw ValidationError(key + " entries must be strings");
            if (!is_missing_marker(m)) out.add_margin(m.get<std::string>());
          }
        } else {
          throw ValidationError(key + " must be a class name or a list of class names");
        }
        break;
      case FeatureKind::category:
      case FeatureKind::binary:
        if (!value.is_string()) throw ValidationError(key + " must be a class name");
        out.set_category(*f, value.get<std::string>());
        break;
    }
  }
  return out;
}

nlohmann::json features_to_json(const SemanticFeatureSet& features) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& s : feature_catalog()) {
    const std::string name(s.name);
    if (features.missing(s.id)) {
      out[name] = nullptr;
    } else if (s.kind == FeatureKind::numeric) {
      out[name] = features.number(s.id);
    } else if (s.kind == FeatureKind::multi_category) {
      out[name] = features.margins();
    } else {
      out[name] = features.category(s.id);
    }
  }
  return out;
}

std::vector<AnnotatedNodule> load_annotations(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open semantic annotation file: " + path.string());
  nlohmann::json doc;
  try {
    is >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed semantic annotation file " + path.string() + ": " + e.what());
  }
  if (doc.is_object()) doc = nlohmann::json::array({doc});
  if (!doc.is_array()) throw ValidationError("semantic annotation file must hold an object or an array");
  std::vector<AnnotatedNodule> out;
  for (const auto& entry : doc) {
    AnnotatedNodule n;
    try {
      n.patient_id = entry.at("patient_id").get<std::string>();
      n.nodule_id = entry.at("nodule_id").get<std::string>();
      n.features = features_from_json(entry.at("features"));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("bad entry in " + path.string() + ": " + e.what());
    }
    out.push_back(std::move(n));
  }
  return out;
}

void save_annotations(const std::vector<AnnotatedNodule>& nodules, const std::filesystem::path& path) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& n : nodules) {
    doc.push_back({{"patient_id", n.patient_id}, {"nodule_id", n.nodule_id}, {"features", features_to_json(n.features)}});
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw RuntimeFailure("cannot write semantic annotations: " + path.string());
  os << doc.dump(2) << '\n';
}

}  // namespace noduleclip::semantics
