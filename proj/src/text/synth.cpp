#include <string>

#include "eaxl/rng.hpp"
#include "eaxl/text.hpp"

namespace eaxl {

namespace {

constexpr std::array<std::string_view, 20> kFiller = {
    "i",     "the",  "today", "yesterday", "my",   "friend", "went", "about", "really", "all",
    "night", "week", "home",  "work",      "we",   "it",     "was",  "so",    "just",   "at"};

constexpr std::array<std::string_view, kNumCoarseEmotions> kResponses = {
    "that sounds like so much fun",
    "oh no that must be scary",
    "yuck that is really awful",
    "i would be upset too honestly",
    "it is nice to have support",
    "i am so sorry to hear that",
    "congratulations you should be proud",
    "good luck i am sure you will do great",
};

}  // namespace

const std::array<std::array<std::string_view, 5>, kNumCoarseEmotions>& synth_signature_words() {
  static const std::array<std::array<std::string_view, 5>, kNumCoarseEmotions> kWords = {{
      {"thrilled", "amazing", "party", "wow", "celebrate"},
      {"terrified", "scared", "dark", "nervous", "spider"},
      {"gross", "ashamed", "guilty", "filthy", "embarrassing"},
      {"angry", "furious", "rude", "traffic", "jealous"},
      {"thankful", "kind", "grateful", "helped", "trust"},
      {"sad", "lonely", "miss", "lost", "cry"},
      {"proud", "impressive", "award", "talent", "won"},
      {"ready", "plan", "confident", "exam", "prepared"},
  }};
  return kWords;
}

std::string synth_response(std::size_t coarse_id) { return std::string(kResponses.at(coarse_id)); }

std::vector<DialogueRecord> synth_corpus(std::uint64_t seed, std::size_t n_pairs,
                                         SynthOptions options) {
  const auto& tax = EmotionTaxonomy::standard();
  const auto& signatures = synth_signature_words();
  Rng rng(seed);
  std::vector<DialogueRecord> records;
  records.reserve(2 * n_pairs);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    const std::size_t emotion = k % kNumCoarseEmotions;
    const auto fine_group = tax.group(emotion);
    const auto fine = fine_group[(k / kNumCoarseEmotions) % fine_group.size()];

    const std::size_t cue = rng.uniform() < options.cue_rate ? emotion : rng.below(kNumCoarseEmotions);
    std::vector<std::string_view> words;
    const std::size_t n_fill = 3 + rng.below(3);
    for (std::size_t i = 0; i < n_fill; ++i) words.push_back(kFiller[rng.below(kFiller.size())]);
    const std::size_t n_sig = 1 + rng.below(2);
    for (std::size_t i = 0; i < n_sig; ++i) {
      const auto word = signatures[cue][rng.below(signatures[cue].size())];
      const auto at = static_cast<std::ptrdiff_t>(rng.below(words.size() + 1));
      words.insert(words.begin() + at, word);
    }
    std::string input;
    for (auto w : words) {
      if (!input.empty()) input.push_back(' ');
      input += w;
    }

    const std::size_t response_key = options.emotion_dependent ? emotion : cue;
    const std::string conv = "synth:" + std::to_string(seed) + ":" + std::to_string(k);

    DialogueRecord first;
    first.conv_id = conv;
    first.utterance_idx = 1;
    first.context_emotion = std::string(fine);
    first.prompt = "synthetic";
    first.speaker_idx = 1;
    first.utterance = input;
    DialogueRecord second = first;
    second.utterance_idx = 2;
    second.speaker_idx = 2;
    second.utterance = synth_response(response_key);
    records.push_back(std::move(first));
    records.push_back(std::move(second));
  }
  return records;
}

}  // namespace eaxl
