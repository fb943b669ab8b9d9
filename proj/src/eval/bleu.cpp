#include <cmath>
#include <unordered_map>

#include "eaxl/error.hpp"
#include "eaxl/evaluation.hpp"

namespace eaxl {

namespace {

using NgramCounts = std::unordered_map<std::string, std::size_t>;

NgramCounts count_ngrams(const Words& words, std::size_t n) {
  NgramCounts counts;
  if (words.size() < n) return counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    std::string key;
    for (std::size_t k = 0; k < n; ++k) {
      if (k) key.push_back('\x1f');
      key += words[i + k];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

BleuBreakdown bleu4(const Words& candidate, const Words& reference) {
  if (reference.empty()) throw DataError("bleu4: empty reference");
  BleuBreakdown b;
  b.candidate_length = candidate.size();
  b.reference_length = reference.size();
  if (candidate.empty()) return b;

  double log_sum = 0;
  for (std::size_t n = 1; n <= kBleuOrder; ++n) {
    const NgramCounts cand = count_ngrams(candidate, n);
    const NgramCounts ref = count_ngrams(reference, n);
    std::size_t matched = 0;
    for (const auto& [gram, count] : cand) {
      auto it = ref.find(gram);
      if (it != ref.end()) matched += std::min(count, it->second);
    }
    const std::size_t total = candidate.size() >= n ? candidate.size() - n + 1 : 0;
    b.matches[n - 1] = matched;
    b.totals[n - 1] = total;
    b.precisions[n - 1] =
        matched == 0 ? kBleuSmoothing : static_cast<double>(matched) / static_cast<double>(total);
    log_sum += std::log(b.precisions[n - 1]);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  b.brevity_penalty = c > r ? 1.0 : std::exp(1.0 - r / c);
  b.score = b.brevity_penalty * std::exp(log_sum / kBleuOrder);
  return b;
}

double multi_ref_bleu(const Words& candidate, const std::vector<Words>& references) {
  if (references.empty()) throw DataError("multi_ref_bleu: no references");
  double total = 0;
  for (const auto& ref : references) total += bleu4(candidate, ref).score;
  return total / static_cast<double>(references.size());
}

Words scoring_tokens(std::string_view text) { return split_words(normalize_text(text)); }

}  // namespace eaxl
