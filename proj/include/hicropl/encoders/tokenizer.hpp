// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hicropl/numcore/errors.hpp"

namespace hicropl {

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kEosToken = "<eos>";

// Closed word-level vocabulary.
class Vocab {
 public:
  Vocab() = default;

  void add(const std::string& word, std::size_t id) {
    if (word.empty()) throw VocabularyError("empty word");
    if (ids_.count(word)) throw VocabularyError("duplicate word '" + word + "'");
    ids_[word] = id;
    if (id >= words_.size()) words_.resize(id + 1);
    if (!words_[id].empty()) throw VocabularyError("duplicate id " + std::to_string(id));
    words_[id] = word;
  }

  bool contains(const std::string& word) const { return ids_.count(word) != 0; }

  std::size_t id(const std::string& word) const {
    auto it = ids_.find(word);
    if (it == ids_.end()) throw VocabularyError("out-of-vocabulary word '" + word + "'");
    return it->second;
  }

  const std::string& word(std::size_t id) const { return words_.at(id); }

  std::size_t pad_id() const { return id(std::string(kPadToken)); }
  std::size_t eos_id() const { return id(std::string(kEosToken)); }

  // One past the largest id.
  std::size_t size() const { return words_.size(); }

  const std::map<std::string, std::size_t>& entries() const { return ids_; }

 private:
  std::map<std::string, std::size_t> ids_;
  std::vector<std::string> words_;
};

// Parses "word<TAB>id" lines. Blank lines and lines starting with '#' are skipped.
inline Vocab parse_vocab(std::istream& in) {
  Vocab vocab;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw VocabularyError("line " + std::to_string(lineno) + ": expected word<TAB>id");
    try {
      vocab.add(line.substr(0, tab), std::stoul(line.substr(tab + 1)));
    } catch (const std::logic_error&) {
      throw VocabularyError("line " + std::to_string(lineno) + ": bad id '" + line.substr(tab + 1) + "'");
    }
  }
  vocab.pad_id();
  vocab.eos_id();
  return vocab;
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file " + path);
  return parse_vocab(in);
}

inline void write_vocab(std::ostream& out, const Vocab& vocab) {
  for (std::size_t id = 0; id < vocab.size(); ++id)
    if (!vocab.word(id).empty()) out << vocab.word(id) << '\t' << id << '\n';
}

// Toy vocabulary: colors, shapes and the words used by the caption templates.
// Mirrors data/vocab.tsv.
inline const Vocab& default_vocab() {
  static const Vocab vocab = [] {
    static constexpr std::string_view words[] = {
        kPadToken, kEosToken, "a",      "red",     "green", "blue",    "yellow",  "square", "circle",   "triangle",
        "photo",   "of",      "the",    "an",      "image", "picture", "drawing", "small",  "large",    "big",
        "shape",   "colored", "bright", "plain",   "simple", "object", "toy",     "sketch", "rendering", "this",
        "is",      "one",     "icon",   "figure",  "pixel", "art",     "orange",  "purple", "white",    "cyan",
    };
    Vocab v;
    for (std::size_t i = 0; i < std::size(words); ++i) v.add(std::string(words[i]), i);
    return v;
  }();
  return vocab;
}

struct TokenSequence {
  std::vector<std::size_t> ids;
  std::size_t eos_position = 0;
};

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream is{std::string(text)};
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

// Word ids, then eos, then pads up to max_len.
inline TokenSequence tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  const auto words = split_words(text);
  if (words.size() + 1 > max_len)
    throw DimensionError("text '" + std::string(text) + "' needs " + std::to_string(words.size() + 1) +
                         " tokens but max_text_len is " + std::to_string(max_len));
  TokenSequence seq;
  seq.ids.reserve(max_len);
  for (const auto& w : words) seq.ids.push_back(vocab.id(w));
  seq.eos_position = seq.ids.size();
  seq.ids.push_back(vocab.eos_id());
  seq.ids.resize(max_len, vocab.pad_id());
  return seq;
}

}  // namespace hicropl
