#include "noduleclip/semantics/text_augment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "noduleclip/common/error.hpp"
#include "noduleclip/semantics/features.hpp"

namespace noduleclip::semantics {
namespace {

constexpr std::string_view kBuiltinSynonyms = R"json({
  "version": "synonyms-v1",
  "entries": {
    "nodule": ["lesion"],
    "identified": ["seen", "noted", "observed"],
    "demonstrates": ["shows", "exhibits", "displays"],
    "shows": ["demonstrates", "exhibits"],
    "associated": ["accompanied"],
    "margins": ["borders", "edges"],
    "shape": ["configuration", "morphology"],
    "consistency": ["density", "attenuation"],
    "level": ["degree"],
    "suspicion": ["concern"],
    "cancer": ["malignancy"],
    "diameter": ["dimension"],
    "longest": ["greatest", "maximal"]
  }
}
)json";

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-'; }

}  // namespace

std::string_view builtin_synonyms_json() { return kBuiltinSynonyms; }

SynonymTable::SynonymTable(std::string version, std::map<std::string, std::vector<std::string>> entries)
    : version_(std::move(version)), entries_(std::move(entries)) {
  const auto words = protected_class_words();
  auto is_protected = [&](const std::string& w) { return std::binary_search(words.begin(), words.end(), lower(w)); };
  for (const auto& [key, synonyms] : entries_) {
    if (is_protected(key)) throw ValidationError("synonym table rewrites protected class word '" + key + "'");
    if (synonyms.empty()) throw ValidationError("synonym table entry '" + key + "' has no synonyms");
    for (const auto& s : synonyms) {
      if (is_protected(s)) throw ValidationError("synonym table introduces protected class word '" + s + "'");
    }
  }
}

SynonymTable SynonymTable::parse(std::string_view json_text) {
  try {
    const auto doc = nlohmann::json::parse(json_text);
    std::map<std::string, std::vector<std::string>> entries;
    for (const auto& [key, value] : doc.at("entries").items()) entries[lower(key)] = value.get<std::vector<std::string>>();
    return SynonymTable(doc.at("version").get<std::string>(), std::move(entries));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed synonym table: ") + e.what());
  }
}

SynonymTable SynonymTable::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open synonym table: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

const SynonymTable& SynonymTable::builtin() {
  static const SynonymTable table = parse(kBuiltinSynonyms);
  return table;
}

const std::vector<std::string>* SynonymTable::find(const std::string& lower_word) const {
  auto it = entries_.find(lower_word);
  return it == entries_.end() ? nullptr : &it->second;
}

void TextAugmentConfig::validate() const {
  if (!(synonym_prob >= 0.0 && synonym_prob <= 1.0)) throw ValidationError("synonym_prob must lie in [0, 1]");
  if (!(crop_prob >= 0.0 && crop_prob <= 1.0)) throw ValidationError("crop_prob must lie in [0, 1]");
  if (!(min_keep_ratio > 0.0 && min_keep_ratio <= 1.0)) throw ValidationError("min_keep_ratio must lie in (0, 1]");
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string augment_text(std::string_view text, const TextAugmentConfig& config, Rng& rng, const SynonymTable& table) {
  config.validate();
  auto tokens = split_whitespace(text);
  if (tokens.empty()) return std::string(text);
  bool changed = false;

  if (config.synonym_prob > 0.0) {
    for (auto& tok : tokens) {
      std::size_t b = 0, e = tok.size();
      while (b < e && !std::isalnum(static_cast<unsigned char>(tok[b]))) ++b;
      while (e > b && !std::isalnum(static_cast<unsigned char>(tok[e - 1]))) --e;
      if (b == e) continue;
      const std::string core = tok.substr(b, e - b);
      if (!std::all_of(core.begin(), core.end(), is_word_char)) continue;
      const auto* synonyms = table.find(lower(core));
      if (!synonyms || !rng.bernoulli(config.synonym_prob)) continue;
      std::string replacement = (*synonyms)[rng.index(synonyms->size())];
      if (std::isupper(static_cast<unsigned char>(core[0]))) {
        replacement[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(replacement[0])));
      }
      tok = tok.substr(0, b) + replacement + tok.substr(e);
      changed = true;
    }
  }

  if (config.crop_prob > 0.0 && rng.bernoulli(config.crop_prob)) {
    const std::size_t n = tokens.size();
    const auto min_keep = static_cast<std::size_t>(std::ceil(config.min_keep_ratio * static_cast<double>(n) - 1e-9));
    const std::size_t keep = min_keep + rng.index(n - std::min(min_keep, n) + 1);
    const std::size_t start = rng.index(n - keep + 1);
    tokens = std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(start + keep));
    changed = true;
  }

  if (!changed) return std::string(text);
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) out += (i ? " " : "") + tokens[i];
  return out;
}

}  // namespace noduleclip::semantics
