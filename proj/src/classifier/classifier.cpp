#include "eaxl/classifier.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "eaxl/adam.hpp"
#include "eaxl/error.hpp"

namespace eaxl {

namespace {

constexpr double kInitRange = 0.08;
constexpr std::size_t kNoIgnore = std::numeric_limits<std::size_t>::max();

Parameter uniform_param(std::string name, Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Scalar>(rng.uniform(-kInitRange, kInitRange));
  return Parameter(std::move(name), std::move(t));
}

template <typename P>
std::vector<P*> collect(auto& self) {
  std::vector<P*> out = {&self.embedding};
  for (auto& p : self.lstm.input_weights) out.push_back(&p);
  for (auto& p : self.lstm.recurrent_weights) out.push_back(&p);
  for (auto& p : self.lstm.biases) out.push_back(&p);
  for (auto* p : {&self.dense_w, &self.dense_b, &self.out_w, &self.out_b}) out.push_back(p);
  return out;
}

// Binds parameters on the tape; constness selects gradient-tracking or
// read-only views.
template <typename Params>
struct BoundClassifier {
  Var embedding;
  std::array<Var, 4> w, u, b;
  Var dense_w, dense_b, out_w, out_b;

  BoundClassifier(Tape& tape, Params& p) {
    embedding = tape.param(p.embedding);
    for (std::size_t k = 0; k < 4; ++k) {
      w[k] = tape.param(p.lstm.input_weights[k]);
      u[k] = tape.param(p.lstm.recurrent_weights[k]);
      b[k] = tape.param(p.lstm.biases[k]);
    }
    dense_w = tape.param(p.dense_w);
    dense_b = tape.param(p.dense_b);
    out_w = tape.param(p.out_w);
    out_b = tape.param(p.out_b);
  }
};

template <typename Params>
Var logits_impl(Tape& tape, Params& params, const std::vector<TokenIds>& batch,
                const ForwardOptions& options) {
  if (batch.empty()) throw DataError("classifier: empty batch");
  const std::size_t max_len = params.config.max_len;
  std::vector<TokenIds> seqs;
  seqs.reserve(batch.size());
  std::size_t steps = 0;
  for (const auto& ids : batch) {
    if (ids.empty()) throw DataError("classifier: empty token sequence");
    seqs.push_back(truncate_left(ids, max_len));
    steps = std::max(steps, seqs.back().size());
  }
  const std::size_t rows = seqs.size();
  const std::size_t hidden = params.lstm.hidden_size();
  BoundClassifier<Params> bound(tape, params);

  Var h = tape.constant(Tensor({rows, hidden}));
  Var c = tape.constant(Tensor({rows, hidden}));
  for (std::size_t t = 0; t < steps; ++t) {
    TokenIds step_ids(rows, kPadId);
    bool any_pad = false;
    Tensor keep({rows, hidden}, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t offset = steps - seqs[r].size();
      if (t >= offset) {
        step_ids[r] = seqs[r][t - offset];
      } else {
        any_pad = true;
        std::fill_n(keep.data() + r * hidden, hidden, Scalar(0));
      }
    }
    Var x = embedding(bound.embedding, step_ids);
    auto [h_new, c_new] = lstm_step(x, h, c, bound.w, bound.u, bound.b);
    if (any_pad) {
      Tensor drop(keep.shape());
      for (std::size_t i = 0; i < keep.size(); ++i) drop[i] = 1 - keep[i];
      Var keep_v = tape.constant(keep);
      Var drop_v = tape.constant(std::move(drop));
      h_new = add(mul(h_new, keep_v), mul(h, drop_v));
      c_new = add(mul(c_new, keep_v), mul(c, drop_v));
    }
    h = h_new;
    c = c_new;
  }
  Var dense = relu(add_row(matmul(h, bound.dense_w), bound.dense_b));
  if (options.training) {
    if (!options.rng) throw Error("classifier: training forward needs an rng");
    dense = dropout(dense, static_cast<Scalar>(params.config.dropout), *options.rng, true);
  }
  return add_row(matmul(dense, bound.out_w), bound.out_b);
}

std::size_t argmax(std::span<const Scalar> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

}  // namespace

std::vector<Parameter*> ClassifierParams::parameters() { return collect<Parameter>(*this); }
std::vector<const Parameter*> ClassifierParams::parameters() const {
  return collect<const Parameter>(*this);
}

ClassifierParams init_classifier(const ClassifierConfig& config, std::uint64_t seed) {
  if (config.vocab_size == 0 || config.embed_dim == 0 || config.hidden_size == 0 ||
      config.dense_size == 0) {
    throw DimensionError("classifier config dims must be positive");
  }
  Rng rng(seed);
  ClassifierParams p;
  p.config = config;
  const std::size_t d = config.embed_dim, h = config.hidden_size;
  p.embedding = uniform_param("classifier.embedding", {config.vocab_size, d}, rng);
  static constexpr std::array<const char*, 4> kGate = {"i", "f", "o", "g"};
  for (std::size_t k = 0; k < 4; ++k) {
    p.lstm.input_weights[k] = uniform_param(std::string("lstm.w_") + kGate[k], {d, h}, rng);
    p.lstm.recurrent_weights[k] = uniform_param(std::string("lstm.u_") + kGate[k], {h, h}, rng);
    p.lstm.biases[k] = uniform_param(std::string("lstm.b_") + kGate[k], {h}, rng);
  }
  p.lstm.biases[kForgetGate].value.fill(1);
  p.dense_w = uniform_param("dense.w", {h, config.dense_size}, rng);
  p.dense_b = uniform_param("dense.b", {config.dense_size}, rng);
  p.out_w = uniform_param("out.w", {config.dense_size, kNumCoarseEmotions}, rng);
  p.out_b = uniform_param("out.b", {kNumCoarseEmotions}, rng);
  return p;
}

std::pair<Var, Var> lstm_step(Var x, Var h_prev, Var c_prev, const std::array<Var, 4>& w,
                              const std::array<Var, 4>& u, const std::array<Var, 4>& b) {
  if (h_prev.shape() != c_prev.shape()) {
    throw DimensionError("lstm_step: hidden " + shape_to_string(h_prev.shape()) +
                         " and cell " + shape_to_string(c_prev.shape()) + " differ");
  }
  std::array<Var, 4> pre;
  for (std::size_t k = 0; k < 4; ++k) pre[k] = add_row(add(matmul(x, w[k]), matmul(h_prev, u[k])), b[k]);
  Var i = sigmoid(pre[kInputGate]);
  Var f = sigmoid(pre[kForgetGate]);
  Var o = sigmoid(pre[kOutputGate]);
  Var g = tanh(pre[kCandidate]);
  Var c = add(mul(f, c_prev), mul(i, g));
  Var h = mul(o, tanh(c));
  return {h, c};
}

std::pair<Var, Var> lstm_step(Var x, Var h_prev, Var c_prev, const LstmParams& params) {
  Tape& tape = *x.tape();
  std::array<Var, 4> w, u, b;
  for (std::size_t k = 0; k < 4; ++k) {
    w[k] = tape.param(params.input_weights[k]);
    u[k] = tape.param(params.recurrent_weights[k]);
    b[k] = tape.param(params.biases[k]);
  }
  return lstm_step(x, h_prev, c_prev, w, u, b);
}

Var classifier_logits(Tape& tape, ClassifierParams& params, const std::vector<TokenIds>& batch,
                      const ForwardOptions& options) {
  return logits_impl(tape, params, batch, options);
}

Var classifier_logits(Tape& tape, const ClassifierParams& params,
                      const std::vector<TokenIds>& batch) {
  return logits_impl(tape, params, batch, ForwardOptions{});
}

std::array<double, kNumCoarseEmotions> classify(const TokenIds& ids, const ClassifierParams& params) {
  if (ids.empty()) throw DataError("classify: empty input");
  Tape tape(false);
  Var probs = softmax(classifier_logits(tape, params, {ids}), 1);
  std::array<double, kNumCoarseEmotions> out{};
  for (std::size_t k = 0; k < kNumCoarseEmotions; ++k) out[k] = probs.value()[k];
  return out;
}

double classifier_loss(const ClassifierParams& params, const std::vector<ClassifierExample>& examples) {
  if (examples.empty()) throw DataError("classifier_loss: no examples");
  Tape tape(false);
  std::vector<TokenIds> batch;
  std::vector<std::size_t> labels;
  for (const auto& e : examples) {
    batch.push_back(e.ids);
    labels.push_back(e.label);
  }
  return cross_entropy(classifier_logits(tape, params, batch), labels, kNoIgnore).value()[0];
}

std::vector<ClassifierExample> classifier_examples(const std::vector<UtterancePair>& pairs,
                                                   std::size_t max_len) {
  std::vector<ClassifierExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back({truncate_left(p.input_ids, max_len), p.coarse_emotion_id});
  }
  return out;
}

double classifier_accuracy(const ClassifierParams& params,
                           const std::vector<ClassifierExample>& examples) {
  if (examples.empty()) return 0;
  std::size_t correct = 0;
  for (const auto& e : examples) {
    Tape tape(false);
    Var logits = classifier_logits(tape, params, {e.ids});
    if (argmax(logits.value().row(0)) == e.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

ClassifierTrainResult train_classifier(const std::vector<ClassifierExample>& examples,
                                       const ClassifierConfig& config, const TrainConfig& train) {
  if (examples.empty()) throw DataError("train_classifier: empty corpus");
  for (const auto& e : examples) {
    if (e.label >= kNumCoarseEmotions) {
      throw DataError("train_classifier: label " + std::to_string(e.label) + " outside [0, 8)");
    }
    if (e.ids.empty()) throw DataError("train_classifier: empty token sequence");
  }
  if (train.batch_size == 0) throw DataError("train_classifier: batch size must be positive");

  ClassifierTrainResult result;
  result.params = init_classifier(config, train.seed);
  Rng rng(train.seed ^ 0x5bd1e995ULL);
  Adam adam(AdamConfig{.lr = train.lr});
  auto params = result.params.parameters();

  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    if (train.shuffle) rng.shuffle(order);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += train.batch_size) {
      const std::size_t end = std::min(order.size(), begin + train.batch_size);
      std::vector<TokenIds> batch;
      std::vector<std::size_t> labels;
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(examples[order[i]].ids);
        labels.push_back(examples[order[i]].label);
      }
      for (Parameter* p : params) p->zero_grad();
      Tape tape;
      Var logits = classifier_logits(tape, result.params, batch, {.training = true, .rng = &rng});
      Var loss = cross_entropy(logits, labels, kNoIgnore);
      for (std::size_t r = 0; r < labels.size(); ++r) {
        if (argmax(logits.value().row(r)) == labels[r]) ++correct;
      }
      loss_sum += loss.value()[0] * static_cast<double>(labels.size());
      tape.backward(loss);
      adam.step(params);
    }
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.loss = loss_sum / static_cast<double>(examples.size());
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
    stats.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(stats);
  }
  result.optimizer_steps = adam.states().empty() ? 0 : adam.states().front().t;
  return result;
}

EmotionPrediction predict_emotion(std::string_view utterance, const ClassifierParams& params,
                                  const Vocabulary& vocab) {
  EmotionPrediction pred;
  const std::string normalized = normalize_text(utterance);
  if (normalized.empty()) {
    pred.probs.fill(1.0 / kNumCoarseEmotions);
    pred.empty_input = true;
    return pred;
  }
  pred.probs = classify(truncate_left(tokenize(normalized, vocab), params.config.max_len), params);
  for (std::size_t k = 1; k < kNumCoarseEmotions; ++k) {
    if (pred.probs[k] > pred.probs[pred.coarse_id]) pred.coarse_id = k;
  }
  return pred;
}

}  // namespace eaxl
