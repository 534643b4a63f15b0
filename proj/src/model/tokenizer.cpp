#include "noduleclip/model/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <climits>
#include <set>

#include <zlib.h>

#include "noduleclip/common/error.hpp"
#include "noduleclip/common/random.hpp"
#include "noduleclip/semantics/prompts.hpp"
#include "noduleclip/semantics/report.hpp"
#include "noduleclip/semantics/text_augment.hpp"

namespace noduleclip::model {
namespace {

bool is_alpha(unsigned char c) { return std::isalpha(c) != 0; }
bool is_digit(unsigned char c) { return std::isdigit(c) != 0; }
bool is_space(unsigned char c) { return std::isspace(c) != 0; }

// Length of the UTF-8 sequence starting with lead byte c.
std::size_t utf8_length(unsigned char c) {
  if (c < 0x80) return 1;
  if ((c >> 5) == 0x6) return 2;
  if ((c >> 4) == 0xE) return 3;
  if ((c >> 3) == 0x1E) return 4;
  return 1;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string utf8_encode(int cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

std::vector<std::string> seed_texts() {
  using namespace semantics;
  std::vector<std::string> texts;
  Rng rng(0);
  SemanticFeatureSet full;
  for (const auto& fs : feature_catalog()) {
    if (fs.kind == FeatureKind::numeric) {
      SemanticFeatureSet one;
      one.set_number(fs.id, 12.5);
      texts.push_back(render_report(one, rng).text());
      full.set_number(fs.id, 12.5);
      continue;
    }
    for (auto cls : fs.classes) {
      SemanticFeatureSet one;
      if (fs.kind == FeatureKind::multi_category) {
        one.add_margin(cls);
      } else {
        one.set_category(fs.id, cls);
      }
      texts.push_back(render_report(one, rng).text());
      one.set_number(Feature::longest_axial_diameter, 9.0);
      texts.push_back(render_report(one, rng).text());
    }
    if (fs.kind == FeatureKind::multi_category) {
      for (auto cls : fs.classes) full.add_margin(cls);
    } else {
      full.set_category(fs.id, fs.kind == FeatureKind::binary ? kPresent : fs.classes.front());
    }
  }
  texts.push_back(render_report(full, rng).text());
  for (const auto& set : all_zero_shot_prompts()) {
    for (const auto& s : set.sentences) texts.push_back(s);
  }
  for (const auto& [key, synonyms] : SynonymTable::builtin().entries()) {
    texts.push_back(key);
    for (const auto& s : synonyms) texts.push_back(s);
  }
  return texts;
}

}  // namespace

ToyTokenizer::ToyTokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
  if (vocab_.size() < 3 || vocab_[0] != "<unk>" || vocab_[1] != "<sot>" || vocab_[2] != "<eot>") {
    throw ValidationError("toy vocabulary must start with <unk>, <sot>, <eot>");
  }
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (!ids_.emplace(vocab_[i], static_cast<int>(i)).second) {
      throw ValidationError("duplicate toy vocabulary entry '" + vocab_[i] + "'");
    }
  }
}

std::vector<std::string> ToyTokenizer::split(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
    } else if (is_alpha(c)) {
      std::size_t j = i + 1;
      while (j < text.size()) {
        const auto d = static_cast<unsigned char>(text[j]);
        if (is_alpha(d)) {
          ++j;
        } else if (d == '-' && j + 1 < text.size() && is_alpha(static_cast<unsigned char>(text[j + 1]))) {
          j += 2;
        } else {
          break;
        }
      }
      out.push_back(lower(text.substr(i, j - i)));
      i = j;
    } else {
      const std::size_t n = std::min(utf8_length(c), text.size() - i);
      out.emplace_back(text.substr(i, n));
      i += n;
    }
  }
  return out;
}

std::vector<std::string> ToyTokenizer::builtin_vocabulary() {
  std::vector<std::string> vocab = {"<unk>", "<sot>", "<eot>"};
  for (char d = '0'; d <= '9'; ++d) vocab.emplace_back(1, d);
  for (const char* p : {".", ",", ":", ";", "-", "(", ")", "/", "×"}) vocab.emplace_back(p);
  std::set<std::string> words;
  for (const auto& text : seed_texts()) {
    for (auto& tok : split(text)) {
      if (is_alpha(static_cast<unsigned char>(tok[0]))) words.insert(std::move(tok));
    }
  }
  vocab.insert(vocab.end(), words.begin(), words.end());
  return vocab;
}

std::vector<int> ToyTokenizer::encode(std::string_view text) const {
  std::vector<int> ids{start_token()};
  for (const auto& tok : split(text)) {
    auto it = ids_.find(tok);
    ids.push_back(it == ids_.end() ? unknown_token() : it->second);
  }
  ids.push_back(end_token());
  return ids;
}

BpeTokenizer::BpeTokenizer(std::vector<std::pair<std::string, std::string>> merges) {
  // Printable bytes map to themselves, the rest to code points from 256 up.
  std::vector<int> printable;
  for (int b = '!'; b <= '~'; ++b) printable.push_back(b);
  for (int b = 0xA1; b <= 0xAC; ++b) printable.push_back(b);
  for (int b = 0xAE; b <= 0xFF; ++b) printable.push_back(b);
  std::vector<int> order = printable;
  std::vector<int> cps = printable;
  int n = 0;
  for (int b = 0; b < 256; ++b) {
    if (std::find(printable.begin(), printable.end(), b) == printable.end()) {
      order.push_back(b);
      cps.push_back(256 + n++);
    }
  }
  byte_symbol_.assign(256, "");
  for (std::size_t i = 0; i < order.size(); ++i) byte_symbol_[static_cast<std::size_t>(order[i])] = utf8_encode(cps[i]);
  for (int b : order) vocab_.push_back(byte_symbol_[static_cast<std::size_t>(b)]);
  for (int b : order) vocab_.push_back(byte_symbol_[static_cast<std::size_t>(b)] + "</w>");
  for (std::size_t i = 0; i < merges.size(); ++i) {
    vocab_.push_back(merges[i].first + merges[i].second);
    ranks_.emplace(merges[i], static_cast<int>(i));
  }
  vocab_.push_back("<|startoftext|>");
  vocab_.push_back("<|endoftext|>");
  for (std::size_t i = 0; i < vocab_.size(); ++i) ids_.emplace(vocab_[i], static_cast<int>(i));
  start_ = static_cast<int>(vocab_.size()) - 2;
  end_ = static_cast<int>(vocab_.size()) - 1;
}

BpeTokenizer BpeTokenizer::load(const std::filesystem::path& merges_path, int max_merges) {
  gzFile f = gzopen(merges_path.string().c_str(), "rb");
  if (!f) throw ValidationError("cannot open merges file: " + merges_path.string());
  std::string content;
  char buf[1 << 16];
  int got = 0;
  while ((got = gzread(f, buf, sizeof(buf))) > 0) content.append(buf, static_cast<std::size_t>(got));
  gzclose(f);
  if (got < 0) throw ValidationError("failed to read merges file: " + merges_path.string());

  std::vector<std::pair<std::string, std::string>> merges;
  std::size_t pos = content.find('\n');
  std::size_t line_no = 1;
  while (pos != std::string::npos && pos + 1 < content.size()) {
    const std::size_t next = content.find('\n', pos + 1);
    std::string line = content.substr(pos + 1, next == std::string::npos ? std::string::npos : next - pos - 1);
    pos = next;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (max_merges >= 0 && static_cast<int>(merges.size()) >= max_merges) break;
    const auto space = line.find(' ');
    if (space == std::string::npos || space == 0 || space + 1 >= line.size()) {
      throw ValidationError("malformed merge at line " + std::to_string(line_no));
    }
    merges.emplace_back(line.substr(0, space), line.substr(space + 1));
  }
  return BpeTokenizer(std::move(merges));
}

std::vector<std::string> BpeTokenizer::bpe(const std::string& token) const {
  // token is a sequence of byte symbols; split into whole UTF-8 characters.
  std::vector<std::string> word;
  for (std::size_t i = 0; i < token.size();) {
    const std::size_t n = utf8_length(static_cast<unsigned char>(token[i]));
    word.push_back(token.substr(i, n));
    i += n;
  }
  if (word.empty()) return word;
  word.back() += "</w>";
  while (word.size() > 1) {
    int best = INT_MAX;
    std::size_t at = 0;
    for (std::size_t i = 0; i + 1 < word.size(); ++i) {
      auto it = ranks_.find({word[i], word[i + 1]});
      if (it != ranks_.end() && it->second < best) {
        best = it->second;
        at = i;
      }
    }
    if (best == INT_MAX) break;
    const std::string first = word[at];
    const std::string second = word[at + 1];
    std::vector<std::string> merged;
    for (std::size_t i = 0; i < word.size();) {
      if (i + 1 < word.size() && word[i] == first && word[i + 1] == second) {
        merged.push_back(first + second);
        i += 2;
      } else {
        merged.push_back(word[i++]);
      }
    }
    word = std::move(merged);
  }
  return word;
}

std::vector<int> BpeTokenizer::encode(std::string_view text) const {
  // Whitespace collapse and lower-casing, then the pre-tokenizer classes:
  // contractions, letter runs, single digits, other non-space runs.
  const std::string s = lower(text);
  std::vector<std::string> pieces;
  std::size_t i = 0;
  static const char* contractions[] = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (is_space(c)) {
      ++i;
      continue;
    }
    bool matched = false;
    for (const char* k : contractions) {
      const std::string_view kv(k);
      if (s.compare(i, kv.size(), kv) == 0) {
        pieces.emplace_back(kv);
        i += kv.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    std::size_t j = i + 1;
    if (is_alpha(c)) {
      while (j < s.size() && is_alpha(static_cast<unsigned char>(s[j]))) ++j;
    } else if (!is_digit(c)) {
      while (j < s.size()) {
        const auto d = static_cast<unsigned char>(s[j]);
        if (is_space(d) || is_alpha(d) || is_digit(d)) break;
        ++j;
      }
    }
    pieces.push_back(s.substr(i, j - i));
    i = j;
  }

  std::vector<int> ids{start_};
  for (const auto& piece : pieces) {
    std::string symbols;
    for (unsigned char b : piece) symbols += byte_symbol_[b];
    for (const auto& sym : bpe(symbols)) {
      auto it = ids_.find(sym);
      if (it == ids_.end()) throw RuntimeFailure("BPE symbol missing from vocabulary: " + sym);
      ids.push_back(it->second);
    }
  }
  ids.push_back(end_);
  return ids;
}

std::shared_ptr<const Tokenizer> make_tokenizer(const TokenizerConfig& config) {
  if (config.kind == "toy") {
    return std::make_shared<ToyTokenizer>(config.vocab.empty() ? ToyTokenizer::builtin_vocabulary() : config.vocab);
  }
  if (config.kind == "bpe") {
    return std::make_shared<BpeTokenizer>(BpeTokenizer::load(config.merges_path, config.max_merges));
  }
  throw ValidationError("unknown tokenizer kind '" + config.kind + "'");
}

}  // namespace noduleclip::model
