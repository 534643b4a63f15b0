#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "noduleclip/model/config.hpp"

namespace noduleclip::model {

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  // Ids framed by the start and end tokens.
  virtual std::vector<int> encode(std::string_view text) const = 0;
  virtual int vocab_size() const = 0;
  virtual int start_token() const = 0;
  virtual int end_token() const = 0;
};

// Lower-cased words (letters with inner hyphens), single digits, and single
// punctuation characters; anything outside the vocabulary maps to <unk>.
class ToyTokenizer final : public Tokenizer {
 public:
  explicit ToyTokenizer(std::vector<std::string> vocab);

  // Specials, digits, punctuation, then every word the report templates,
  // zero-shot prompts and synonym table can produce, sorted.
  static std::vector<std::string> builtin_vocabulary();
  static std::vector<std::string> split(std::string_view text);

  std::vector<int> encode(std::string_view text) const override;
  int vocab_size() const override { return static_cast<int>(vocab_.size()); }
  int start_token() const override { return 1; }
  int end_token() const override { return 2; }
  int unknown_token() const { return 0; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> ids_;
};

// Byte-level BPE compatible with the public image-text model's vocabulary:
// 256 byte symbols, their end-of-word variants, one symbol per merge, then
// <|startoftext|> and <|endoftext|>. Letter classes are ASCII-only; other
// characters split as punctuation.
class BpeTokenizer final : public Tokenizer {
 public:
  // Reads a merges file (plain or gzip) whose first line is a header.
  // max_merges < 0 keeps all merges.
  static BpeTokenizer load(const std::filesystem::path& merges_path, int max_merges = -1);
  explicit BpeTokenizer(std::vector<std::pair<std::string, std::string>> merges);

  std::vector<int> encode(std::string_view text) const override;
  int vocab_size() const override { return static_cast<int>(vocab_.size()); }
  int start_token() const override { return start_; }
  int end_token() const override { return end_; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }

  std::vector<std::string> bpe(const std::string& token) const;

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> ids_;
  std::map<std::pair<std::string, std::string>, int> ranks_;
  std::vector<std::string> byte_symbol_;
  int start_ = 0;
  int end_ = 0;
};

std::shared_ptr<const Tokenizer> make_tokenizer(const TokenizerConfig& config);

}  // namespace noduleclip::model
