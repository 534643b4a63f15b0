#include "noduleclip/semantics/report.hpp"

#include <cctype>
#include <cstdio>
#include <sstream>

#include "noduleclip/common/error.hpp"

namespace noduleclip::semantics {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string format_mm(double mm) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", mm);
  return buf;
}

std::string join_list(const std::vector<std::string>& items, bool oxford_and) {
  if (items.empty()) return {};
  if (items.size() == 1) return items[0];
  if (!oxford_and) {
    std::string out = items[0];
    for (std::size_t i = 1; i < items.size(); ++i) out += ", " + items[i];
    return out;
  }
  if (items.size() == 2) return items[0] + " and " + items[1];
  std::string out;
  for (std::size_t i = 0; i + 1 < items.size(); ++i) out += items[i] + ", ";
  return out + "and " + items.back();
}

const char* article(std::string_view word) {
  return !word.empty() && std::string_view("aeiou").find(word[0]) != std::string_view::npos ? "an" : "a";
}

std::string bullet(const SemanticFeatureSet& f, const FeatureSpec& s) {
  std::string value;
  switch (s.kind) {
    case FeatureKind::numeric: value = format_mm(f.number(s.id)); break;
    case FeatureKind::multi_category: value = join_list(f.margins(), false); break;
    default: value = f.category(s.id); break;
  }
  return "- " + std::string(s.report_label) + ": " + value;
}

bool present(const SemanticFeatureSet& f, Feature id) { return !f.missing(id) && f.category(id) == kPresent; }

std::string size_sentence(const SemanticFeatureSet& f) {
  std::string size;
  const bool has_long = !f.missing(Feature::longest_axial_diameter);
  const bool has_short = !f.missing(Feature::short_diameter);
  if (has_long && has_short) {
    size = format_mm(f.number(Feature::longest_axial_diameter)) + " × " + format_mm(f.number(Feature::short_diameter)) + " mm";
  } else if (has_long) {
    size = format_mm(f.number(Feature::longest_axial_diameter)) + " mm";
  }
  std::string consistency = f.missing(Feature::consistency) ? "" : lower(f.category(Feature::consistency));
  std::vector<std::string> modifiers;
  if (!size.empty()) modifiers.push_back(size);
  if (!consistency.empty()) modifiers.push_back(consistency);
  std::string sentence;
  if (modifiers.empty()) {
    sentence = "A nodule is identified";
  } else {
    const std::string mods = join_list(modifiers, false);
    sentence = std::string(size.empty() ? article(mods) : "A") + " " + mods + " nodule is identified";
    if (size.empty()) sentence[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(sentence[0])));
  }
  if (!has_long && has_short) sentence += " with a short diameter of " + format_mm(f.number(Feature::short_diameter)) + " mm";
  return sentence + ".";
}

std::string findings_sentence(const SemanticFeatureSet& f) {
  std::vector<std::string> clauses;

  std::vector<std::string> shows;
  if (!f.missing(Feature::margin)) {
    std::vector<std::string> m;
    for (const auto& v : f.margins()) m.push_back(lower(v));
    shows.push_back(join_list(m, false) + " margins");
  }
  if (!f.missing(Feature::shape)) {
    const std::string shape = lower(f.category(Feature::shape));
    shows.push_back(std::string(article(shape)) + " " + shape + " shape");
  }
  if (!shows.empty()) clauses.push_back("demonstrates " + join_list(shows, true));

  if (!f.missing(Feature::margin_conspicuity)) clauses.push_back("is " + lower(f.category(Feature::margin_conspicuity)));

  std::vector<std::string> internal, external;
  for (const auto& s : feature_catalog()) {
    if (s.kind != FeatureKind::binary || !present(f, s.id)) continue;
    (s.group == FeatureGroup::internal ? internal : external).push_back(std::string(s.phrase));
  }
  if (!internal.empty()) clauses.push_back("shows " + join_list(internal, true));
  if (!external.empty()) clauses.push_back("is associated with " + join_list(external, true));

  if (clauses.empty()) return {};
  return "The nodule " + join_list(clauses, true) + ".";
}

}  // namespace

std::string NoduleReport::joined_findings() const {
  std::string out;
  for (std::size_t i = 0; i < findings.size(); ++i) {
    if (i) out += '\n';
    out += findings[i];
  }
  return out;
}

std::string NoduleReport::text() const {
  return "Findings:\n" + joined_findings() + "\n\nImpression:\n" + impression + "\n";
}

NoduleReport NoduleReport::parse(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  NoduleReport report;
  enum { none, findings, impression } section = none;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == "Findings:") {
      section = findings;
    } else if (line == "Impression:") {
      section = impression;
    } else if (section == findings && !line.empty()) {
      report.findings.push_back(line);
    } else if (section == impression && !line.empty()) {
      report.impression += (report.impression.empty() ? "" : " ") + line;
    }
  }
  if (report.findings.empty()) throw ValidationError("report text has no findings section");
  return report;
}

NoduleReport render_report(const SemanticFeatureSet& features, Rng& rng) {
  if (features.present_count() == 0) throw ValidationError("cannot render a report: all features are missing");
  NoduleReport report;
  for (const auto& s : feature_catalog()) {
    if (!features.missing(s.id)) report.findings.push_back(bullet(features, s));
  }
  shuffle(report.findings, rng);

  std::vector<std::string> sentences = {size_sentence(features)};
  if (auto s = findings_sentence(features); !s.empty()) sentences.push_back(std::move(s));
  if (!features.missing(Feature::level_of_suspicion)) {
    sentences.push_back("The level of suspicion for lung cancer is " + lower(features.category(Feature::level_of_suspicion)) + ".");
  }
  for (std::size_t i = 0; i < sentences.size(); ++i) report.impression += (i ? " " : "") + sentences[i];
  return report;
}

std::string select_training_text(const NoduleReport& report, int coin) {
  return coin == 1 ? report.impression : report.joined_findings();
}

std::string select_training_text(const NoduleReport& report, Rng& rng) {
  return select_training_text(report, rng.bernoulli(0.5) ? 1 : 0);
}

}  // namespace noduleclip::semantics
