#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "eaxl/checkpoint.hpp"
#include "eaxl/evaluation.hpp"

namespace eaxl {

struct ChatReply {
  EmotionPrediction emotion;
  /// Emotion fed to the chatbot: the override when given, else the prediction.
  std::size_t emotion_id = 0;
  std::string response;
  std::size_t token_count = 0;
};

/// Classifier and chatbot loaded side by side.
class Pipeline {
 public:
  Pipeline(LoadedClassifier classifier, LoadedChatbot chatbot);
  /// Throws CheckpointError for unreadable files or swapped tags.
  static Pipeline load(const std::string& classifier_path, const std::string& chatbot_path);

  /// Throws DataError when the text has no usable tokens.
  ChatReply respond(std::string_view text, std::optional<std::size_t> emotion_override = {},
                    MemoryState* memory = nullptr) const;

  const ClassifierParams& classifier() const { return classifier_.params; }
  const ChatbotParams& chatbot() const { return chatbot_.params; }
  const Vocabulary& chatbot_vocab() const { return chatbot_.vocab; }

 private:
  LoadedClassifier classifier_;
  LoadedChatbot chatbot_;
};

/// Responses with the classifier's predicted emotion, as served.
class PipelineResponder final : public ResponseModel {
 public:
  explicit PipelineResponder(const Pipeline& pipeline) : pipeline_(pipeline) {}
  std::string respond(const UtterancePair& item) const override;

 private:
  const Pipeline& pipeline_;
};

}  // namespace eaxl
