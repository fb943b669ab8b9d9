#include "eaxl/evaluation.hpp"

namespace eaxl {

namespace {
// Keeps the held-out corpus disjoint from the training draw.
constexpr std::uint64_t kEvalSeedOffset = 0x632be59bd9b4e019ULL;
}

AblationResult ablation_compare(const std::vector<DialogueRecord>& train_records,
                                const std::vector<DialogueRecord>& eval_records,
                                const AblationConfig& config, std::uint64_t seed) {
  auto train_pairs = make_pairs(train_records);
  const Vocabulary vocab = build_vocab(pair_texts(train_pairs), config.min_freq, 20000);
  encode_pairs(train_pairs, vocab, config.model.max_len);
  const auto eval_items = group_eval_items(make_pairs(eval_records));

  ModelConfig fused_cfg = config.model;
  fused_cfg.vocab_size = vocab.size();
  fused_cfg.fuse_emotion = true;
  ModelConfig ablated_cfg = fused_cfg;
  ablated_cfg.fuse_emotion = false;

  ChatbotTrainConfig train = config.train;
  train.seed = seed;
  const auto fused = train_chatbot(train_pairs, fused_cfg, train);
  const auto ablated = train_chatbot(train_pairs, ablated_cfg, train);

  AblationResult result;
  result.fused = corpus_eval(GoldEmotionResponder(fused.params, vocab), eval_items);
  result.ablated = corpus_eval(GoldEmotionResponder(ablated.params, vocab), eval_items);
  result.difference = result.fused.corpus_mean - result.ablated.corpus_mean;
  return result;
}

AblationResult ablation_compare(const AblationConfig& config, std::uint64_t seed) {
  return ablation_compare(synth_corpus(seed, config.train_pairs, config.corpus),
                          synth_corpus(seed ^ kEvalSeedOffset, config.eval_pairs, config.corpus),
                          config, seed);
}

}  // namespace eaxl
