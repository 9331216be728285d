#pragma once

// Synthetic corpora for the smoke-training checks.

#include <algorithm>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "spectramix/rng.hpp"
#include "spectramix/training.hpp"

namespace spectramix::testing {

/// Lowercase strings with no bigram repeated inside a string, so an exact copy
/// is reachable under no_repeat_ngram = 2.
inline std::vector<std::string> copy_sources(std::size_t n, std::uint64_t seed, std::size_t min_len = 6,
                                             std::size_t max_len = 16) {
  Rng rng(seed);
  std::vector<std::string> out;
  while (out.size() < n) {
    const std::size_t len = min_len + rng.uniform_int(max_len - min_len + 1);
    std::string s(1, static_cast<char>('a' + rng.uniform_int(26)));
    std::set<std::pair<char, char>> seen;
    while (s.size() < len) {
      const char c = static_cast<char>('a' + rng.uniform_int(26));
      if (seen.insert({s.back(), c}).second) s.push_back(c);
    }
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<TokenPair> copy_pairs(const std::vector<std::string>& sources, const GenerationConfig& gen) {
  std::vector<TokenPair> pairs;
  for (const auto& s : sources) pairs.push_back(tokenize_pair(s, s, gen));
  return pairs;
}

/// Repetitive byte stream built from a handful of short words.
inline std::vector<std::vector<int>> repetitive_corpus(std::size_t n_docs, std::uint64_t seed) {
  static const std::vector<std::string> words{"abc ", "abd ", "cab ", "dab "};
  Rng rng(seed);
  std::vector<std::vector<int>> docs;
  for (std::size_t d = 0; d < n_docs; ++d) {
    std::string text;
    const std::size_t n_words = 20 + rng.uniform_int(40);
    for (std::size_t w = 0; w < n_words; ++w) text += words[rng.uniform_int(words.size())];
    docs.push_back(encode(text));
  }
  return docs;
}

}  // namespace spectramix::testing
