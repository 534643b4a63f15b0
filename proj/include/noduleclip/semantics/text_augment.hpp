#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "noduleclip/common/random.hpp"

namespace noduleclip::semantics {

// Versioned word -> synonyms table. Neither keys nor replacements may be
// protected clinical class words (see protected_class_words()).
class SynonymTable {
 public:
  SynonymTable(std::string version, std::map<std::string, std::vector<std::string>> entries);

  static SynonymTable parse(std::string_view json_text);
  static SynonymTable load(const std::filesystem::path& path);
  // Compiled-in copy of assets/synonyms_v1.json.
  static const SynonymTable& builtin();

  const std::string& version() const { return version_; }
  const std::vector<std::string>* find(const std::string& lower_word) const;
  const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }

 private:
  std::string version_;
  std::map<std::string, std::vector<std::string>> entries_;
};

std::string_view builtin_synonyms_json();

struct TextAugmentConfig {
  double synonym_prob = 0.15;   // per eligible word
  double crop_prob = 0.5;       // chance of a contiguous crop
  double min_keep_ratio = 0.6;  // crops keep at least ceil(ratio * n) tokens

  void validate() const;
  static TextAugmentConfig none() { return {0.0, 0.0, 1.0}; }
};

// Whitespace tokens; a crop keeps a contiguous run and rejoins it with single
// spaces. When nothing fires the input is returned unchanged.
std::string augment_text(std::string_view text, const TextAugmentConfig& config, Rng& rng,
                         const SynonymTable& table = SynonymTable::builtin());

std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace noduleclip::semantics
