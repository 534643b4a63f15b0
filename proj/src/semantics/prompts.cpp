#include "noduleclip/semantics/prompts.hpp"

#include <algorithm>
#include <cctype>

#include "noduleclip/common/error.hpp"

namespace noduleclip::semantics {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string sentence_for(const FeatureSpec& fs, const std::string& cls) {
  if (fs.kind == FeatureKind::binary) {
    return cls == kPresent ? "There is " + std::string(fs.phrase) + "." : std::string("No findings.");
  }
  return "This nodule " + std::string(fs.phrase) + " is " + lower(cls) + ".";
}

}  // namespace

PromptSet zero_shot_prompts(Feature feature) {
  const auto& fs = spec(feature);
  std::vector<std::string> classes(fs.classes.begin(), fs.classes.end());
  return zero_shot_prompts(feature, classes);
}

PromptSet zero_shot_prompts(Feature feature, const std::vector<std::string>& classes) {
  const auto& fs = spec(feature);
  if (fs.kind == FeatureKind::numeric) {
    throw ValidationError("no zero-shot prompts for numeric feature '" + std::string(fs.name) + "'");
  }
  if (classes.size() < 2) throw ValidationError("zero-shot query needs at least 2 candidates");
  PromptSet set{feature, {}, {}};
  for (const auto& c : classes) {
    auto canonical = canonical_class(feature, c);
    if (!canonical) throw ValidationError("'" + c + "' is not a class of '" + std::string(fs.name) + "'");
    set.sentences.push_back(sentence_for(fs, *canonical));
    set.classes.push_back(*canonical);
  }
  return set;
}

std::vector<PromptSet> all_zero_shot_prompts() {
  std::vector<PromptSet> out;
  for (const auto& fs : feature_catalog()) {
    if (fs.kind != FeatureKind::numeric) out.push_back(zero_shot_prompts(fs.id));
  }
  return out;
}

}  // namespace noduleclip::semantics
