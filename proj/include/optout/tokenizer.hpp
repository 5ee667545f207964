#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace optout {

/// Word-level vocabulary. Lowercases input and splits punctuation into
/// standalone tokens. Ids 0-4 are reserved for the special tokens below.
class Tokenizer {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kQuestion = 3;  // "q:" marker
  static constexpr int kAnswer = 4;    // "a:" marker
  static constexpr int kNumSpecial = 5;

  Tokenizer();

  /// Vocabulary = specials + sorted distinct words of `texts`.
  static Tokenizer build(std::span<const std::string> texts);
  /// Restores a vocabulary from its id-ordered word list (specials included).
  static Tokenizer from_words(std::vector<std::string> words);

  static std::vector<std::string> split_words(std::string_view text);

  /// Unknown words map to <unk>, or throw EncodingError when strict.
  std::vector<int> encode(std::string_view text, bool strict = false) const;
  /// Joins non-special tokens with single spaces.
  std::string decode(std::span<const int> ids) const;

  int id(const std::string& word) const;  // kUnk when absent
  const std::string& word(int id) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  friend bool operator==(const Tokenizer& a, const Tokenizer& b) { return a.words_ == b.words_; }

 private:
  void index();

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace optout
