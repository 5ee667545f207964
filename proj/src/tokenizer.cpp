#include "optout/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "optout/common.hpp"

namespace optout {

namespace {

const std::vector<std::string>& special_words() {
  static const std::vector<std::string> words{"<unk>", "<bos>", "<eos>", "q:", "a:"};
  return words;
}

}  // namespace

Tokenizer::Tokenizer() : words_(special_words()) { index(); }

void Tokenizer::index() {
  ids_.clear();
  for (std::size_t i = 0; i < words_.size(); ++i) {
    ids_.emplace(words_[i], static_cast<int>(i));
  }
}

std::vector<std::string> Tokenizer::split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c) && c != '-' && c != '\'') {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

Tokenizer Tokenizer::build(std::span<const std::string> texts) {
  std::set<std::string> distinct;
  for (const auto& text : texts) {
    for (auto& w : split_words(text)) {
      distinct.insert(std::move(w));
    }
  }
  Tokenizer tok;
  for (const auto& w : distinct) {
    if (tok.ids_.find(w) == tok.ids_.end()) {
      tok.words_.push_back(w);
    }
  }
  tok.index();
  return tok;
}

Tokenizer Tokenizer::from_words(std::vector<std::string> words) {
  const auto& specials = special_words();
  if (words.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), words.begin())) {
    throw EncodingError("vocabulary does not start with the reserved special tokens");
  }
  Tokenizer tok;
  tok.words_ = std::move(words);
  tok.index();
  if (tok.ids_.size() != tok.words_.size()) {
    throw EncodingError("vocabulary contains duplicate words");
  }
  return tok;
}

std::vector<int> Tokenizer::encode(std::string_view text, bool strict) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) {
    const auto it = ids_.find(w);
    if (it == ids_.end()) {
      if (strict) {
        throw EncodingError("word '" + w + "' is not in the vocabulary");
      }
      ids.push_back(kUnk);
    } else {
      ids.push_back(it->second);
    }
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < kNumSpecial) {
      continue;
    }
    if (!out.empty()) {
      out.push_back(' ');
    }
    out += word(id);
  }
  return out;
}

int Tokenizer::id(const std::string& w) const {
  const auto it = ids_.find(w);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw EncodingError("token id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(words_.size()));
  }
  return words_[static_cast<std::size_t>(id)];
}

}  // namespace optout
