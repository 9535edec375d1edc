// Fixed vocabulary and whitespace tokenizer.
//
// The vocabulary is a flat JSON array of token strings; index == token id.
// Id 0 is PAD, id 1 is UNK. Captions are lowercased, split on whitespace,
// stripped of surrounding punctuation, and padded/truncated to a fixed
// length (16 by default).
#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "textdepth/common.hpp"

namespace textdepth {

inline constexpr int32_t kPadId = 0;
inline constexpr int32_t kUnkId = 1;
inline constexpr int kDefaultMaxTokens = 16;

struct TokenSequence {
  std::vector<int32_t> ids;       // length max_tokens, PAD-filled
  std::vector<uint8_t> attention; // 1 where ids != PAD

  int64_t length() const {
    int64_t n = 0;
    for (uint8_t m : attention) n += m;
    return n;
  }

  friend bool operator==(const TokenSequence& a, const TokenSequence& b) {
    return a.ids == b.ids && a.attention == b.attention;
  }
};

class Vocabulary {
 public:
  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int32_t>(i);
  }

  // The 64-token list shipped with the project.
  static const Vocabulary& builtin() {
    static const Vocabulary v(builtin_tokens());
    return v;
  }

  static std::vector<std::string> builtin_tokens() {
    return {
        "<pad>",    "<unk>",    "a",        "an",        "the",       "and",
        "is",       "are",      "of",       "in",        "on",        "at",
        "to",       "with",     "image",    "scene",     "shapes",    "simple",
        "cube",     "sphere",   "floor",    "wall",      "background","object",
        "objects",  "left",     "right",    "center",    "top",       "bottom",
        "near",     "far",      "middle",   "front",     "back",      "behind",
        "close",    "distant",  "small",    "large",     "big",       "tiny",
        "dark",     "bright",   "gray",     "white",     "black",     "one",
        "two",      "three",    "four",     "empty",     "plane",     "ball",
        "box",      "side",     "depth",    "distance",  "distances", "different",
        "varying",  "complex",  "3d",       "structured",
    };
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open vocabulary: " + path.string());
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("invalid vocabulary JSON in " + path.string() + ": " + e.what());
    }
    if (!j.is_array()) throw DataError("vocabulary must be a JSON array: " + path.string());
    std::vector<std::string> tokens;
    for (const auto& t : j) tokens.push_back(t.get<std::string>());
    if (tokens.size() < 2) throw DataError("vocabulary needs at least PAD and UNK");
    return Vocabulary(std::move(tokens));
  }

  void save(const std::filesystem::path& path) const {
    nlohmann::json j = tokens_;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write vocabulary: " + path.string());
    f << j.dump(2) << "\n";
  }

  int32_t id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
  }

  const std::string& token(int32_t id) const { return tokens_.at(static_cast<size_t>(id)); }
  size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int32_t> index_;
};

inline std::vector<std::string> split_words(const std::string& caption) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : caption) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  // strip surrounding punctuation
  for (auto& w : words) {
    size_t b = 0, e = w.size();
    auto is_punct = [](char c) {
      return !(std::isalnum(static_cast<unsigned char>(c)));
    };
    while (b < e && is_punct(w[b])) ++b;
    while (e > b && is_punct(w[e - 1])) --e;
    w = w.substr(b, e - b);
  }
  std::erase_if(words, [](const std::string& w) { return w.empty(); });
  return words;
}

inline TokenSequence tokenize(const std::string& caption, const Vocabulary& vocab,
                              int max_tokens = kDefaultMaxTokens) {
  TokenSequence seq;
  seq.ids.assign(static_cast<size_t>(max_tokens), kPadId);
  seq.attention.assign(static_cast<size_t>(max_tokens), 0);
  const auto words = split_words(caption);
  const size_t n = std::min(words.size(), static_cast<size_t>(max_tokens));
  for (size_t k = 0; k < n; ++k) {
    seq.ids[k] = vocab.id_of(words[k]);
    seq.attention[k] = 1;
  }
  return seq;
}

}  // namespace textdepth
