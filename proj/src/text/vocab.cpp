#include <algorithm>
#include <map>

#include "eaxl/error.hpp"
#include "eaxl/text.hpp"

namespace eaxl {

namespace {
const std::array<std::string, kNumSpecials> kSpecials = {"<pad>", "<unk>", "<bos>", "<eos>"};
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  id_to_token_.assign(kSpecials.begin(), kSpecials.end());
  id_to_token_.insert(id_to_token_.end(), tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    if (!token_to_id_.emplace(id_to_token_[i], i).second) {
      throw DataError("duplicate vocabulary token '" + id_to_token_[i] + "'");
    }
  }
}

std::size_t Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= id_to_token_.size()) throw DataError("token id " + std::to_string(id) + " out of range");
  return id_to_token_[id];
}

std::vector<std::string> Vocabulary::regular_tokens() const {
  return {id_to_token_.begin() + kNumSpecials, id_to_token_.end()};
}

Vocabulary build_vocab(const std::vector<std::string>& corpus, std::size_t min_freq,
                       std::size_t max_size) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  if (max_size < kNumSpecials) throw DataError("build_vocab: max_size must be at least 4");
  std::map<std::string, std::size_t> counts;
  for (const auto& text : corpus) {
    for (auto& w : split_words(text)) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_freq && tok != "<pad>" && tok != "<unk>" && tok != "<bos>" && tok != "<eos>") {
      kept.emplace_back(tok, n);
    }
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (kept.size() > max_size - kNumSpecials) kept.resize(max_size - kNumSpecials);
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return Vocabulary(tokens);
}

TokenIds tokenize(std::string_view normalized, const Vocabulary& vocab) {
  TokenIds ids;
  for (const auto& w : split_words(normalized)) ids.push_back(vocab.id(w));
  ids.push_back(kEosId);
  return ids;
}

TokenIds truncate_left(TokenIds ids, std::size_t max_len) {
  if (max_len == 0 || ids.size() <= max_len) return ids;
  return TokenIds(ids.end() - static_cast<std::ptrdiff_t>(max_len), ids.end());
}

TokenIds truncate_right(TokenIds ids, std::size_t max_len) {
  if (max_len == 0 || ids.size() <= max_len) return ids;
  ids.resize(max_len);
  ids.back() = kEosId;
  return ids;
}

std::string detokenize(const TokenIds& ids, const Vocabulary& vocab) {
  std::string out;
  for (auto id : ids) {
    if (id < kNumSpecials) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

}  // namespace eaxl
