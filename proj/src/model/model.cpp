#include "eaxl/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "eaxl/error.hpp"

namespace eaxl {

void ModelConfig::validate() const {
  if (vocab_size == 0 || n_heads == 0 || d_model == 0 || d_ff == 0 || max_gen_len == 0) {
    throw DimensionError("model config dims must be positive");
  }
  if (d_model % n_heads != 0) {
    throw DimensionError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                         std::to_string(n_heads));
  }
  if (!(dropout >= 0 && dropout < 1)) throw DimensionError("dropout must lie in [0, 1)");
}

namespace {

constexpr double kInitStd = 0.02;

Parameter normal_param(std::string name, Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Scalar>(rng.normal(0.0, kInitStd));
  return Parameter(std::move(name), std::move(t));
}

Parameter filled_param(std::string name, std::size_t n, Scalar value) {
  return Parameter(std::move(name), Tensor({n}, value));
}

FeedForwardParams init_ffn(const ModelConfig& c, Rng& rng, const std::string& prefix) {
  FeedForwardParams f;
  f.w1 = normal_param(prefix + ".w1", {c.d_model, c.d_ff}, rng);
  f.b1 = filled_param(prefix + ".b1", c.d_ff, 0);
  f.w2 = normal_param(prefix + ".w2", {c.d_ff, c.d_model}, rng);
  f.b2 = filled_param(prefix + ".b2", c.d_model, 0);
  f.ln_gain = filled_param(prefix + ".ln_gain", c.d_model, 1);
  f.ln_bias = filled_param(prefix + ".ln_bias", c.d_model, 0);
  return f;
}

CrossAttentionParams init_cross(const ModelConfig& c, Rng& rng, const std::string& prefix) {
  CrossAttentionParams a;
  const Shape sq = {c.d_model, c.d_model};
  a.wq = normal_param(prefix + ".wq", sq, rng);
  a.wk = normal_param(prefix + ".wk", sq, rng);
  a.wv = normal_param(prefix + ".wv", sq, rng);
  a.wo = normal_param(prefix + ".wo", sq, rng);
  a.ln_gain = filled_param(prefix + ".ln_gain", c.d_model, 1);
  a.ln_bias = filled_param(prefix + ".ln_bias", c.d_model, 0);
  return a;
}

template <typename Self, typename Out>
void collect_rel(Self& a, std::vector<Out*>& out) {
  for (auto* p : {&a.wq, &a.wk, &a.wv, &a.wo, &a.wr, &a.u, &a.v, &a.ln_gain, &a.ln_bias}) out.push_back(p);
}

template <typename Self, typename Out>
void collect_cross(Self& a, std::vector<Out*>& out) {
  for (auto* p : {&a.wq, &a.wk, &a.wv, &a.wo, &a.ln_gain, &a.ln_bias}) out.push_back(p);
}

template <typename Self, typename Out>
void collect_ffn(Self& f, std::vector<Out*>& out) {
  for (auto* p : {&f.w1, &f.b1, &f.w2, &f.b2, &f.ln_gain, &f.ln_bias}) out.push_back(p);
}

template <typename Out, typename Self>
std::vector<Out*> collect_chatbot(Self& self) {
  std::vector<Out*> out = {&self.token_embedding, &self.emotion_embedding};
  for (auto& layer : self.encoder) {
    collect_rel(layer.attn, out);
    collect_ffn(layer.ffn, out);
  }
  for (auto& layer : self.decoder) {
    collect_rel(layer.self_attn, out);
    collect_cross(layer.cross_attn, out);
    collect_ffn(layer.ffn, out);
  }
  out.push_back(&self.out_w);
  out.push_back(&self.out_b);
  return out;
}

Var layer_norm(Var x, Var gain, Var bias) {
  return add_row(mul_row(row_standardize(x, kLayerNormEps), gain), bias);
}

Var maybe_dropout(const ForwardContext& ctx, Var x) {
  if (!ctx.training || ctx.dropout == 0) return x;
  if (!ctx.rng) throw Error("training forward pass needs an rng");
  return dropout(x, static_cast<Scalar>(ctx.dropout), *ctx.rng, true);
}

template <typename P>
Var rel_attention_impl(const ForwardContext& ctx, Var h, const Tensor* mem, P& p,
                       const ModelConfig& config, bool causal) {
  Tape& tape = ctx.tape;
  const std::size_t len = h.rows();
  const std::size_t d = h.cols();
  if (d != config.d_model) {
    throw DimensionError("rel_attention: input " + shape_to_string(h.shape()) +
                         " does not have d_model = " + std::to_string(config.d_model) + " columns");
  }
  const std::size_t m = mem ? mem->rows() : 0;
  if (mem && mem->cols() != d) {
    throw DimensionError("rel_attention: memory " + shape_to_string(mem->shape()) +
                         " does not match d_model " + std::to_string(d));
  }
  if (m > config.mem_len) {
    throw DimensionError("rel_attention: memory holds " + std::to_string(m) +
                         " rows, mem_len is " + std::to_string(config.mem_len));
  }
  const std::size_t heads = config.n_heads;
  const std::size_t dh = config.d_head();
  const std::size_t keys = m + len;

  Var wq = tape.param(p.wq), wk = tape.param(p.wk), wv = tape.param(p.wv);
  Var wo = tape.param(p.wo), wr = tape.param(p.wr);
  Var u = tape.param(p.u), v = tape.param(p.v);

  Var cat = h;
  if (m > 0) {
    const Var parts[] = {tape.constant(*mem), h};
    cat = concat_rows(parts);
  }
  Var q = matmul(h, wq);
  Var k = matmul(cat, wk);
  Var val = matmul(cat, wv);

  // Encodings for every distance a query can see, largest distance first.
  const long d_max = static_cast<long>(keys) - 1;
  const long d_min = causal ? 0 : -(static_cast<long>(len) - 1);
  const std::size_t n_dist = static_cast<std::size_t>(d_max - d_min + 1);
  Tensor enc({n_dist, d});
  for (std::size_t r = 0; r < n_dist; ++r) {
    relative_encoding(static_cast<double>(d_max - static_cast<long>(r)), d, enc.data() + r * d);
  }
  Var rk = matmul(tape.constant(std::move(enc)), wr);

  std::vector<std::size_t> index(len * keys, 0);
  std::vector<bool> allowed(len * keys, true);
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = 0; j < keys; ++j) {
      const long dist = static_cast<long>(m + i) - static_cast<long>(j);
      if (causal && dist < 0) {
        allowed[i * keys + j] = false;
        continue;
      }
      index[i * keys + j] = static_cast<std::size_t>(d_max - dist);
    }
  }

  const Scalar inv_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  std::vector<Var> head_out;
  head_out.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Var qh = slice_cols(q, hd * dh, dh);
    Var kh = slice_cols(k, hd * dh, dh);
    Var vh = slice_cols(val, hd * dh, dh);
    Var rh = slice_cols(rk, hd * dh, dh);
    Var content = matmul(add_row(qh, slice_rows(u, hd, 1)), transpose(kh));
    Var position_all = matmul(add_row(qh, slice_rows(v, hd, 1)), transpose(rh));
    Var position = gather_cols(position_all, index, keys);
    Var scores = scale(add(content, position), inv_scale);
    Var probs = causal ? masked_softmax(scores, allowed) : softmax(scores, 1);
    head_out.push_back(matmul(probs, vh));
  }
  Var attn = matmul(concat_cols(head_out), wo);
  attn = maybe_dropout(ctx, attn);
  return layer_norm(add(h, attn), tape.param(p.ln_gain), tape.param(p.ln_bias));
}

template <typename P>
Var cross_attention(const ForwardContext& ctx, Var x, Var enc, P& p, const ModelConfig& config) {
  Tape& tape = ctx.tape;
  const std::size_t heads = config.n_heads;
  const std::size_t dh = config.d_head();
  Var q = matmul(x, tape.param(p.wq));
  Var k = matmul(enc, tape.param(p.wk));
  Var val = matmul(enc, tape.param(p.wv));
  const Scalar inv_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  std::vector<Var> head_out;
  head_out.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Var qh = slice_cols(q, hd * dh, dh);
    Var kh = slice_cols(k, hd * dh, dh);
    Var vh = slice_cols(val, hd * dh, dh);
    Var probs = softmax(scale(matmul(qh, transpose(kh)), inv_scale), 1);
    head_out.push_back(matmul(probs, vh));
  }
  Var attn = maybe_dropout(ctx, matmul(concat_cols(head_out), tape.param(p.wo)));
  return layer_norm(add(x, attn), tape.param(p.ln_gain), tape.param(p.ln_bias));
}

template <typename P>
Var feed_forward(const ForwardContext& ctx, Var x, P& p) {
  Tape& tape = ctx.tape;
  Var hidden = relu(add_row(matmul(x, tape.param(p.w1)), tape.param(p.b1)));
  Var out = add_row(matmul(hidden, tape.param(p.w2)), tape.param(p.b2));
  out = maybe_dropout(ctx, out);
  return layer_norm(add(x, out), tape.param(p.ln_gain), tape.param(p.ln_bias));
}

void check_emotion(std::size_t emotion_id) {
  if (emotion_id >= kNumCoarseEmotions) {
    throw DataError("emotion id " + std::to_string(emotion_id) + " outside [0, 8)");
  }
}

template <typename P>
Var encoder_input_impl(const ForwardContext& ctx, P& params, const TokenIds& ids,
                       std::size_t emotion_id) {
  check_emotion(emotion_id);
  if (ids.empty()) throw DataError("encoder input: empty token sequence");
  Tape& tape = ctx.tape;
  const auto ids_cut = truncate_left(ids, params.config.max_len);
  Var words = embedding(tape.param(params.token_embedding), ids_cut);
  Var emotion = params.config.fuse_emotion
                    ? slice_rows(tape.param(params.emotion_embedding), emotion_id, 1)
                    : tape.constant(Tensor({1, params.config.d_model}));
  return fuse_emotion(words, emotion);
}

template <typename P>
EncoderOutput encoder_forward_impl(const ForwardContext& ctx, Var fused, const MemoryState* mem,
                                   P& params) {
  const ModelConfig& config = params.config;
  const bool has_mem = mem && !mem->empty();
  if (has_mem && mem->layers.size() != params.encoder.size()) {
    throw DimensionError("encoder: memory has " + std::to_string(mem->layers.size()) +
                         " layers, model has " + std::to_string(params.encoder.size()));
  }
  EncoderOutput out;
  Var x = fused;
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    const Tensor* layer_mem = has_mem ? &mem->layers[l] : nullptr;
    if (config.mem_len > 0) {
      // Cache the layer input, detached from the tape.
      const Tensor& cur = x.value();
      const std::size_t prev = layer_mem ? layer_mem->rows() : 0;
      const std::size_t total = prev + cur.rows();
      const std::size_t keep = std::min(total, config.mem_len);
      const std::size_t skip = total - keep;
      const std::size_t d = cur.cols();
      Tensor cached({keep, d});
      for (std::size_t r = 0; r < keep; ++r) {
        const std::size_t src = skip + r;
        const Scalar* row = src < prev ? layer_mem->data() + src * d : cur.data() + (src - prev) * d;
        std::copy_n(row, d, cached.data() + r * d);
      }
      out.memory.layers.push_back(std::move(cached));
    }
    auto& layer = params.encoder[l];
    x = rel_attention_impl(ctx, x, layer_mem, layer.attn, config, false);
    x = feed_forward(ctx, x, layer.ffn);
  }
  out.hidden = x;
  return out;
}

template <typename P>
Var decoder_forward_impl(const ForwardContext& ctx, const TokenIds& prefix, Var enc_hidden,
                         P& params) {
  if (prefix.empty()) throw DataError("decoder: empty prefix");
  if (prefix.front() != kBosId) throw DataError("decoder: prefix must start with BOS");
  Tape& tape = ctx.tape;
  const ModelConfig& config = params.config;
  Var x = embedding(tape.param(params.token_embedding), prefix);
  for (auto& layer : params.decoder) {
    x = rel_attention_impl(ctx, x, nullptr, layer.self_attn, config, true);
    x = cross_attention(ctx, x, enc_hidden, layer.cross_attn, config);
    x = feed_forward(ctx, x, layer.ffn);
  }
  return add_row(matmul(x, tape.param(params.out_w)), tape.param(params.out_b));
}

}  // namespace

std::vector<Parameter*> ChatbotParams::parameters() { return collect_chatbot<Parameter>(*this); }
std::vector<const Parameter*> ChatbotParams::parameters() const {
  return collect_chatbot<const Parameter>(*this);
}

RelAttentionParams init_rel_attention(const ModelConfig& c, Rng& rng, const std::string& prefix) {
  RelAttentionParams a;
  const Shape sq = {c.d_model, c.d_model};
  a.wq = normal_param(prefix + ".wq", sq, rng);
  a.wk = normal_param(prefix + ".wk", sq, rng);
  a.wv = normal_param(prefix + ".wv", sq, rng);
  a.wo = normal_param(prefix + ".wo", sq, rng);
  a.wr = normal_param(prefix + ".wr", sq, rng);
  a.u = normal_param(prefix + ".u", {c.n_heads, c.d_head()}, rng);
  a.v = normal_param(prefix + ".v", {c.n_heads, c.d_head()}, rng);
  a.ln_gain = filled_param(prefix + ".ln_gain", c.d_model, 1);
  a.ln_bias = filled_param(prefix + ".ln_bias", c.d_model, 0);
  return a;
}

ChatbotParams init_chatbot(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ChatbotParams p;
  p.config = config;
  p.token_embedding = normal_param("token_embedding", {config.vocab_size, config.d_model}, rng);
  p.emotion_embedding = normal_param("emotion_embedding", {kNumCoarseEmotions, config.d_model}, rng);
  for (std::size_t l = 0; l < config.n_enc_layers; ++l) {
    const std::string prefix = "enc" + std::to_string(l);
    EncoderLayerParams layer;
    layer.attn = init_rel_attention(config, rng, prefix + ".attn");
    layer.ffn = init_ffn(config, rng, prefix + ".ffn");
    p.encoder.push_back(std::move(layer));
  }
  for (std::size_t l = 0; l < config.n_dec_layers; ++l) {
    const std::string prefix = "dec" + std::to_string(l);
    DecoderLayerParams layer;
    layer.self_attn = init_rel_attention(config, rng, prefix + ".self");
    layer.cross_attn = init_cross(config, rng, prefix + ".cross");
    layer.ffn = init_ffn(config, rng, prefix + ".ffn");
    p.decoder.push_back(std::move(layer));
  }
  p.out_w = normal_param("out.w", {config.d_model, config.vocab_size}, rng);
  p.out_b = filled_param("out.b", config.vocab_size, 0);
  return p;
}

Var fuse_emotion(Var word_embs, Var emotion) {
  if (emotion.value().size() != word_embs.cols()) {
    throw DimensionError("fuse_emotion: emotion vector " + shape_to_string(emotion.shape()) +
                         " does not match word embeddings " + shape_to_string(word_embs.shape()));
  }
  return row_standardize(add_row(word_embs, emotion), kFusionEps);
}

void relative_encoding(double distance, std::size_t d_model, Scalar* out) {
  const std::size_t half = d_model / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d_model));
    out[i] = static_cast<Scalar>(std::sin(distance * freq));
    out[half + i] = static_cast<Scalar>(std::cos(distance * freq));
  }
  // Odd widths leave one trailing slot.
  if (d_model % 2 == 1) out[d_model - 1] = 0;
}

Var rel_attention(const ForwardContext& ctx, Var h, const Tensor* mem,
                  const RelAttentionParams& params, const ModelConfig& config, bool causal) {
  return rel_attention_impl(ctx, h, mem, params, config, causal);
}

Var rel_attention(const ForwardContext& ctx, Var h, const Tensor* mem, RelAttentionParams& params,
                  const ModelConfig& config, bool causal) {
  return rel_attention_impl(ctx, h, mem, params, config, causal);
}

Var encoder_input(const ForwardContext& ctx, ChatbotParams& params, const TokenIds& ids,
                  std::size_t emotion_id) {
  return encoder_input_impl(ctx, params, ids, emotion_id);
}

Var encoder_input(const ForwardContext& ctx, const ChatbotParams& params, const TokenIds& ids,
                  std::size_t emotion_id) {
  return encoder_input_impl(ctx, params, ids, emotion_id);
}

EncoderOutput encoder_forward(const ForwardContext& ctx, Var fused, const MemoryState* mem,
                              ChatbotParams& params) {
  return encoder_forward_impl(ctx, fused, mem, params);
}

EncoderOutput encoder_forward(const ForwardContext& ctx, Var fused, const MemoryState* mem,
                              const ChatbotParams& params) {
  return encoder_forward_impl(ctx, fused, mem, params);
}

Var decoder_forward(const ForwardContext& ctx, const TokenIds& prefix, Var enc_hidden,
                    ChatbotParams& params) {
  return decoder_forward_impl(ctx, prefix, enc_hidden, params);
}

Var decoder_forward(const ForwardContext& ctx, const TokenIds& prefix, Var enc_hidden,
                    const ChatbotParams& params) {
  return decoder_forward_impl(ctx, prefix, enc_hidden, params);
}

Var chatbot_loss(const ForwardContext& ctx, const std::vector<const UtterancePair*>& batch,
                 ChatbotParams& params) {
  if (batch.empty()) throw DataError("chatbot_loss: empty batch");
  std::vector<Var> logits;
  std::vector<std::size_t> targets;
  for (const UtterancePair* pair : batch) {
    if (pair->response_ids.empty()) throw DataError("chatbot_loss: empty response");
    Var fused = encoder_input(ctx, params, pair->input_ids, pair->coarse_emotion_id);
    Var enc = encoder_forward(ctx, fused, nullptr, params).hidden;
    TokenIds prefix = {kBosId};
    prefix.insert(prefix.end(), pair->response_ids.begin(), pair->response_ids.end() - 1);
    logits.push_back(decoder_forward(ctx, prefix, enc, params));
    targets.insert(targets.end(), pair->response_ids.begin(), pair->response_ids.end());
  }
  Var all = logits.size() == 1 ? logits.front() : concat_rows(logits);
  return cross_entropy(all, targets, kPadId);
}

double train_step(const std::vector<const UtterancePair*>& batch, ChatbotParams& params,
                  Adam& optimizer, Rng& rng) {
  auto list = params.parameters();
  for (Parameter* p : list) p->zero_grad();
  Tape tape;
  ForwardContext ctx{tape, true, &rng, params.config.dropout};
  Var loss = chatbot_loss(ctx, batch, params);
  const double value = loss.value()[0];
  tape.backward(loss);
  optimizer.step(list);
  return value;
}

ChatbotTrainResult train_chatbot(const std::vector<UtterancePair>& pairs, const ModelConfig& config,
                                 const ChatbotTrainConfig& train) {
  if (pairs.empty()) throw DataError("train_chatbot: empty corpus");
  if (train.batch_size == 0) throw DataError("train_chatbot: batch size must be positive");
  ChatbotTrainResult result;
  result.params = init_chatbot(config, train.seed);
  Adam adam(AdamConfig{.lr = train.lr});
  Rng rng(train.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<const UtterancePair*> order;
  for (const auto& p : pairs) order.push_back(&p);
  for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    rng.shuffle(order);
    double loss_sum = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += train.batch_size) {
      const std::size_t end = std::min(order.size(), begin + train.batch_size);
      std::vector<const UtterancePair*> batch(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                              order.begin() + static_cast<std::ptrdiff_t>(end));
      loss_sum += train_step(batch, result.params, adam, rng) * static_cast<double>(batch.size());
    }
    result.history.push_back(
        {epoch + 1, loss_sum / static_cast<double>(order.size()),
         std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count()});
  }
  return result;
}

TokenIds generate(const TokenIds& input_ids, std::size_t emotion_id, const ChatbotParams& params,
                  const GenerateOptions& options, MemoryState* memory) {
  check_emotion(emotion_id);
  const bool has_content = std::any_of(input_ids.begin(), input_ids.end(),
                                       [](std::size_t id) { return id >= kNumSpecials || id == kUnkId; });
  if (!has_content) throw DataError("generate: empty utterance after tokenization");
  const std::size_t limit = options.max_gen_len.value_or(params.config.max_gen_len);

  Tensor enc_hidden;
  {
    Tape tape(false);
    ForwardContext ctx{tape};
    Var fused = encoder_input(ctx, params, input_ids, emotion_id);
    EncoderOutput enc = encoder_forward(ctx, fused, memory, params);
    enc_hidden = enc.hidden.value();
    if (memory) *memory = std::move(enc.memory);
  }

  Rng rng(options.seed);
  TokenIds prefix = {kBosId};
  TokenIds out;
  while (out.size() < limit) {
    Tape tape(false);
    ForwardContext ctx{tape};
    Var logits = decoder_forward(ctx, prefix, tape.constant(enc_hidden), params);
    const auto last = logits.value().row(prefix.size() - 1);
    std::size_t next = 0;
    if (options.top_k == 0) {
      for (std::size_t j = 1; j < last.size(); ++j) {
        if (last[j] > last[next]) next = j;
      }
    } else {
      std::vector<std::size_t> ids(last.size());
      for (std::size_t j = 0; j < ids.size(); ++j) ids[j] = j;
      const std::size_t k = std::min(options.top_k, ids.size());
      std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                        [&](std::size_t a, std::size_t b) {
                          return last[a] > last[b] || (last[a] == last[b] && a < b);
                        });
      std::vector<double> weights(k);
      double total = 0;
      for (std::size_t j = 0; j < k; ++j) {
        weights[j] = std::exp((last[ids[j]] - last[ids[0]]) / options.temperature);
        total += weights[j];
      }
      double draw = rng.uniform() * total;
      next = ids[k - 1];
      for (std::size_t j = 0; j < k; ++j) {
        draw -= weights[j];
        if (draw < 0) {
          next = ids[j];
          break;
        }
      }
    }
    if (next == kEosId) break;
    out.push_back(next);
    prefix.push_back(next);
  }
  return out;
}

}  // namespace eaxl
