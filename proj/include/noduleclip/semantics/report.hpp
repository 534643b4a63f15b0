#pragma once

#include <string>
#include <vector>

#include "noduleclip/common/random.hpp"
#include "noduleclip/semantics/features.hpp"

namespace noduleclip::semantics {

struct NoduleReport {
  std::vector<std::string> findings;  // "- <Label>: <value>"
  std::string impression;

  std::string joined_findings() const;
  // "Findings:\n<bullets>\n\nImpression:\n<impression>\n"
  std::string text() const;
  static NoduleReport parse(const std::string& text);
};

// Report source behind the training text. The template engine below is the
// tested implementation; an LLM-backed generator can implement the same
// interface.
class ReportGenerator {
 public:
  virtual ~ReportGenerator() = default;
  virtual NoduleReport generate(const SemanticFeatureSet& features, Rng& rng) const = 0;
};

// One bullet per present feature in random order, margins combined into one
// bullet, MISSING features omitted. The impression holds a size/consistency
// sentence, a sentence listing present findings, and a suspicion sentence
// when the level of suspicion is annotated. Absent findings never reach the
// impression.
NoduleReport render_report(const SemanticFeatureSet& features, Rng& rng);

class TemplateReportGenerator final : public ReportGenerator {
 public:
  NoduleReport generate(const SemanticFeatureSet& features, Rng& rng) const override {
    return render_report(features, rng);
  }
};

// Joined findings when coin == 0, impression when coin == 1.
std::string select_training_text(const NoduleReport& report, int coin);
std::string select_training_text(const NoduleReport& report, Rng& rng);

}  // namespace noduleclip::semantics
