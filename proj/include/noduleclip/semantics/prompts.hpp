#pragma once

#include <string>
#include <vector>

#include "noduleclip/semantics/features.hpp"

namespace noduleclip::semantics {

// Candidate sentences for zero-shot scoring of one feature. Categorical
// features get "This nodule <phrase> is <class>." per class; binary features
// get "There is <phrase>." against "No findings.".
struct PromptSet {
  Feature feature;
  std::vector<std::string> sentences;
  std::vector<std::string> classes;  // aligned with sentences
};

// Throws ValidationError for numeric features.
PromptSet zero_shot_prompts(Feature feature);
// Prompts restricted to the listed classes, in the given order.
PromptSet zero_shot_prompts(Feature feature, const std::vector<std::string>& classes);
// Every non-numeric feature in catalog order.
std::vector<PromptSet> all_zero_shot_prompts();

}  // namespace noduleclip::semantics
