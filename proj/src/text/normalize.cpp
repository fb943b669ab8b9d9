#include <algorithm>
#include <array>
#include <cctype>

#include "eaxl/text.hpp"

namespace eaxl {

namespace {

bool is_break_char(char ch) {
  switch (ch) {
    case '.': case ',': case '!': case '?': case ';': case ':': case '"': case '(': case ')':
      return true;
    default:
      return std::isspace(static_cast<unsigned char>(ch)) != 0;
  }
}

constexpr std::array<std::string_view, 5> kSuffixes = {"ing", "es", "ed", "ly", "s"};
constexpr std::size_t kMinStem = 3;

}  // namespace

std::string SuffixStemNormalizer::stem(std::string_view word) {
  // Only purely alphabetic words are stemmed.
  if (!std::all_of(word.begin(), word.end(),
                   [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; })) {
    return std::string(word);
  }
  for (auto suffix : kSuffixes) {
    if (word.size() >= suffix.size() + kMinStem && word.ends_with(suffix)) {
      return std::string(word.substr(0, word.size() - suffix.size()));
    }
  }
  return std::string(word);
}

std::string SuffixStemNormalizer::normalize(std::string_view text) const {
  std::string out;
  std::string word;
  auto flush = [&] {
    // Apostrophes survive only inside a word.
    const auto first = word.find_first_not_of('\'');
    if (first != std::string::npos) {
      const auto last = word.find_last_not_of('\'');
      const std::string stemmed = stem(std::string_view(word).substr(first, last - first + 1));
      if (!out.empty()) out.push_back(' ');
      out += stemmed;
    }
    word.clear();
  };
  for (char ch : text) {
    if (is_break_char(ch)) {
      flush();
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return out;
}

std::string normalize_text(std::string_view text) {
  static const SuffixStemNormalizer kNormalizer;
  return kNormalizer.normalize(text);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) words.emplace_back(text.substr(start, i - start));
  }
  return words;
}

}  // namespace eaxl
