#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "eaxl/model.hpp"
#include "eaxl/text.hpp"

namespace eaxl {

/// Floor substituted for zero n-gram precisions.
inline constexpr double kBleuSmoothing = 1e-9;
inline constexpr int kBleuOrder = 4;

struct BleuBreakdown {
  std::array<double, kBleuOrder> precisions{};  // smoothed p1..p4
  std::array<std::size_t, kBleuOrder> matches{};
  std::array<std::size_t, kBleuOrder> totals{};
  double brevity_penalty = 0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
  double score = 0;
};

using Words = std::vector<std::string>;

/// Sentence BLEU-4 against one reference. Empty candidates score 0.
BleuBreakdown bleu4(const Words& candidate, const Words& reference);

/// Arithmetic mean of bleu4 over the references.
double multi_ref_bleu(const Words& candidate, const std::vector<Words>& references);

/// Scoring tokenization: normalize_text followed by a whitespace split.
Words scoring_tokens(std::string_view text);
inline constexpr std::string_view kScoringTokenizerId = "suffix-stem-v1+whitespace";

/// Anything that turns an evaluation item into a response string.
class ResponseModel {
 public:
  virtual ~ResponseModel() = default;
  /// Must be safe to call concurrently on distinct items.
  virtual std::string respond(const UtterancePair& item) const = 0;
};

struct EvalItemScore {
  std::string input;
  std::string response;
  std::size_t n_references = 0;
  double score = 0;
};

struct EvalReport {
  std::vector<EvalItemScore> items;
  double corpus_mean = 0;
  std::size_t item_count = 0;
  double smoothing = kBleuSmoothing;
  std::string tokenizer = std::string(kScoringTokenizerId);

  nlohmann::json to_json() const;
  /// Plain-text summary table.
  std::string summary() const;
};

/// Scores every item with multi_ref_bleu over its references. Items are
/// generated in parallel; the mean is summed in item order.
EvalReport corpus_eval(const ResponseModel& model, const std::vector<UtterancePair>& items);

/// Greedy chatbot responses with a fixed emotion source: the item's labelled
/// emotion (used by the ablation harness).
class GoldEmotionResponder final : public ResponseModel {
 public:
  GoldEmotionResponder(const ChatbotParams& params, const Vocabulary& vocab)
      : params_(params), vocab_(vocab) {}
  std::string respond(const UtterancePair& item) const override;

 private:
  const ChatbotParams& params_;
  const Vocabulary& vocab_;
};

struct AblationConfig {
  ModelConfig model;
  ChatbotTrainConfig train;
  std::size_t train_pairs = 128;
  std::size_t eval_pairs = 64;
  SynthOptions corpus;
  std::size_t min_freq = 1;
};

struct AblationResult {
  EvalReport fused;
  EvalReport ablated;
  /// fused.corpus_mean - ablated.corpus_mean
  double difference = 0;
};

/// Trains two chatbots on the same synthetic corpus and seed, identical except
/// that the second replaces the emotion vector with zeros, then scores both on
/// held-out items with the labelled emotion.
AblationResult ablation_compare(const std::vector<DialogueRecord>& train_records,
                                const std::vector<DialogueRecord>& eval_records,
                                const AblationConfig& config, std::uint64_t seed);

/// Same, on synth_corpus draws of config.train_pairs / config.eval_pairs.
AblationResult ablation_compare(const AblationConfig& config, std::uint64_t seed);

}  // namespace eaxl
