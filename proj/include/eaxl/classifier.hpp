#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "eaxl/autodiff.hpp"
#include "eaxl/text.hpp"

namespace eaxl {

struct LstmParams {
  // Gate order: input, forget, output, candidate.
  std::array<Parameter, 4> input_weights;      // d_in x H
  std::array<Parameter, 4> recurrent_weights;  // H x H
  std::array<Parameter, 4> biases;             // H

  std::size_t input_size() const { return input_weights[0].value.rows(); }
  std::size_t hidden_size() const { return recurrent_weights[0].value.rows(); }
};

enum LstmGate : std::size_t { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCandidate = 3 };

struct ClassifierConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 256;
  std::size_t hidden_size = 300;
  std::size_t dense_size = 100;
  double dropout = 0.1;
  std::size_t max_len = kDefaultMaxLen;
};

struct ClassifierParams {
  ClassifierConfig config;
  Parameter embedding;  // V x d_emb
  LstmParams lstm;
  Parameter dense_w;  // H x dense
  Parameter dense_b;
  Parameter out_w;  // dense x 8
  Parameter out_b;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

/// Uniform(-0.08, 0.08) everywhere, forget-gate bias +1.
ClassifierParams init_classifier(const ClassifierConfig& config, std::uint64_t seed);

/// One LSTM step on a batch of rows: x [B, d_in], h and c [B, H].
std::pair<Var, Var> lstm_step(Var x, Var h_prev, Var c_prev, const std::array<Var, 4>& w,
                              const std::array<Var, 4>& u, const std::array<Var, 4>& b);
/// Convenience overload binding the parameters on the tape of `x`.
std::pair<Var, Var> lstm_step(Var x, Var h_prev, Var c_prev, const LstmParams& params);

struct ClassifierExample {
  TokenIds ids;
  std::size_t label = 0;
};

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;
};

/// Logits [B, 8] for a batch of non-empty sequences. Sequences are
/// left-padded to a common length; padded steps leave the state unchanged.
Var classifier_logits(Tape& tape, ClassifierParams& params, const std::vector<TokenIds>& batch,
                      const ForwardOptions& options = {});
Var classifier_logits(Tape& tape, const ClassifierParams& params,
                      const std::vector<TokenIds>& batch);

/// Probability vector over the 8 coarse emotions.
std::array<double, kNumCoarseEmotions> classify(const TokenIds& ids, const ClassifierParams& params);

/// Mean cross-entropy over all examples in one batch, dropout off.
double classifier_loss(const ClassifierParams& params, const std::vector<ClassifierExample>& examples);

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  bool shuffle = true;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0;
  double accuracy = 0;
  double wall_ms = 0;
};

struct ClassifierTrainResult {
  ClassifierParams params;
  std::vector<EpochStats> history;
  std::int64_t optimizer_steps = 0;
};

ClassifierTrainResult train_classifier(const std::vector<ClassifierExample>& examples,
                                       const ClassifierConfig& config, const TrainConfig& train);

std::vector<ClassifierExample> classifier_examples(const std::vector<UtterancePair>& pairs,
                                                   std::size_t max_len = kDefaultMaxLen);

double classifier_accuracy(const ClassifierParams& params,
                           const std::vector<ClassifierExample>& examples);

struct EmotionPrediction {
  std::size_t coarse_id = 0;
  std::array<double, kNumCoarseEmotions> probs{};
  /// Set when the normalized input was empty and the uniform prior was used.
  bool empty_input = false;
};

/// normalize -> tokenize -> classify -> argmax (lowest id wins ties).
EmotionPrediction predict_emotion(std::string_view utterance, const ClassifierParams& params,
                                  const Vocabulary& vocab);

}  // namespace eaxl
