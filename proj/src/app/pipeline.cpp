#include "eaxl/pipeline.hpp"

#include "eaxl/error.hpp"

namespace eaxl {

Pipeline::Pipeline(LoadedClassifier classifier, LoadedChatbot chatbot)
    : classifier_(std::move(classifier)), chatbot_(std::move(chatbot)) {}

Pipeline Pipeline::load(const std::string& classifier_path, const std::string& chatbot_path) {
  return Pipeline(classifier_from_checkpoint(load_checkpoint(classifier_path, kClassifierTag)),
                  chatbot_from_checkpoint(load_checkpoint(chatbot_path, kChatbotTag)));
}

ChatReply Pipeline::respond(std::string_view text, std::optional<std::size_t> emotion_override,
                            MemoryState* memory) const {
  const std::string normalized = normalize_text(text);
  if (normalized.empty()) throw DataError("input has no words");
  if (emotion_override && *emotion_override >= kNumCoarseEmotions) {
    throw DataError("emotion id out of range: " + std::to_string(*emotion_override));
  }
  ChatReply reply;
  reply.emotion = predict_emotion(text, classifier_.params, classifier_.vocab);
  reply.emotion_id = emotion_override.value_or(reply.emotion.coarse_id);
  const TokenIds ids =
      truncate_left(tokenize(normalized, chatbot_.vocab), chatbot_.params.config.max_len);
  const TokenIds out = generate(ids, reply.emotion_id, chatbot_.params, {}, memory);
  reply.response = detokenize(out, chatbot_.vocab);
  reply.token_count = out.size();
  return reply;
}

std::string PipelineResponder::respond(const UtterancePair& item) const {
  try {
    return pipeline_.respond(item.input_text).response;
  } catch (const DataError&) {
    return {};
  }
}

}  // namespace eaxl
