#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "eaxl/adam.hpp"
#include "eaxl/autodiff.hpp"
#include "eaxl/text.hpp"

namespace eaxl {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t n_heads = 8;
  std::size_t d_model = 256;
  std::size_t d_ff = 100;
  std::size_t mem_len = 32;
  double dropout = 0.1;
  std::size_t max_gen_len = 40;
  std::size_t max_len = kDefaultMaxLen;
  /// When false the emotion vector is replaced by zeros before normalization.
  bool fuse_emotion = true;

  std::size_t d_head() const { return d_model / n_heads; }
  /// Throws DimensionError when dims are zero or d_model % n_heads != 0.
  void validate() const;
};

inline constexpr Scalar kFusionEps = 1e-5;
inline constexpr Scalar kLayerNormEps = 1e-5;

/// Self-attention block with relative positions: projections, the relative
/// key projection, global content (u) and position (v) biases and the
/// post-residual layer norm.
struct RelAttentionParams {
  Parameter wq, wk, wv, wo, wr;
  Parameter u, v;  // n_heads x d_head
  Parameter ln_gain, ln_bias;
};

struct CrossAttentionParams {
  Parameter wq, wk, wv, wo;
  Parameter ln_gain, ln_bias;
};

struct FeedForwardParams {
  Parameter w1, b1, w2, b2;
  Parameter ln_gain, ln_bias;
};

struct EncoderLayerParams {
  RelAttentionParams attn;
  FeedForwardParams ffn;
};

struct DecoderLayerParams {
  RelAttentionParams self_attn;
  CrossAttentionParams cross_attn;
  FeedForwardParams ffn;
};

struct ChatbotParams {
  ModelConfig config;
  Parameter token_embedding;    // V x d_model
  Parameter emotion_embedding;  // 8 x d_model
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;
  Parameter out_w;  // d_model x V
  Parameter out_b;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

/// Normal(0, 0.02) projections and embeddings; layer-norm gain 1, shift 0.
ChatbotParams init_chatbot(const ModelConfig& config, std::uint64_t seed);
RelAttentionParams init_rel_attention(const ModelConfig& config, Rng& rng, const std::string& prefix);

/// Per-layer cache of the previous segment's hidden states (no gradient).
struct MemoryState {
  std::vector<Tensor> layers;

  std::size_t length() const { return layers.empty() ? 0 : layers.front().rows(); }
  bool empty() const { return length() == 0; }
};

/// Everything a forward pass needs besides parameters.
struct ForwardContext {
  Tape& tape;
  bool training = false;
  Rng* rng = nullptr;
  double dropout = 0;
};

/// Row-standardized sum of word embeddings [L, d] and an emotion vector [d].
Var fuse_emotion(Var word_embs, Var emotion);

/// Sinusoidal encoding of one (possibly negative) distance: the first half of
/// the vector is sin(d * f_i), the second half cos(d * f_i), with
/// f_i = 10000^(-2i/d).
void relative_encoding(double distance, std::size_t d_model, Scalar* out);

/// Multi-head relative self-attention over concat(mem, h), then output
/// projection, dropout, residual and layer norm. `mem` may be null; it must
/// not hold more than config.mem_len rows. With `causal`, query i sees
/// memory plus positions <= i.
Var rel_attention(const ForwardContext& ctx, Var h, const Tensor* mem,
                  const RelAttentionParams& params, const ModelConfig& config, bool causal);
Var rel_attention(const ForwardContext& ctx, Var h, const Tensor* mem, RelAttentionParams& params,
                  const ModelConfig& config, bool causal);

struct EncoderOutput {
  Var hidden;
  MemoryState memory;
};

/// Emotion-fused input embeddings for one utterance.
Var encoder_input(const ForwardContext& ctx, ChatbotParams& params, const TokenIds& ids,
                  std::size_t emotion_id);
Var encoder_input(const ForwardContext& ctx, const ChatbotParams& params, const TokenIds& ids,
                  std::size_t emotion_id);

/// Encoder stack over one segment. `mem` (may be null or empty) holds the
/// previous segment; the returned memory keeps the last mem_len rows of
/// concat(mem, layer input) per layer.
EncoderOutput encoder_forward(const ForwardContext& ctx, Var fused, const MemoryState* mem,
                              ChatbotParams& params);
EncoderOutput encoder_forward(const ForwardContext& ctx, Var fused, const MemoryState* mem,
                              const ChatbotParams& params);

/// Logits [T, V] for a BOS-prefixed target prefix.
Var decoder_forward(const ForwardContext& ctx, const TokenIds& prefix, Var enc_hidden,
                    ChatbotParams& params);
Var decoder_forward(const ForwardContext& ctx, const TokenIds& prefix, Var enc_hidden,
                    const ChatbotParams& params);

/// Teacher-forced loss of a batch (mean over all non-PAD target tokens).
Var chatbot_loss(const ForwardContext& ctx, const std::vector<const UtterancePair*>& batch,
                 ChatbotParams& params);

/// One teacher-forced Adam step; returns the pre-step loss.
double train_step(const std::vector<const UtterancePair*>& batch, ChatbotParams& params,
                  Adam& optimizer, Rng& rng);

struct ChatbotTrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

struct ChatbotEpoch {
  std::size_t epoch = 0;
  double loss = 0;
  double wall_ms = 0;
};

struct ChatbotTrainResult {
  ChatbotParams params;
  std::vector<ChatbotEpoch> history;
};

ChatbotTrainResult train_chatbot(const std::vector<UtterancePair>& pairs, const ModelConfig& config,
                                 const ChatbotTrainConfig& train);

struct GenerateOptions {
  /// 0 selects greedy decoding.
  std::size_t top_k = 0;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  /// Overrides config.max_gen_len when set.
  std::optional<std::size_t> max_gen_len;
};

/// Encodes the fused input once, then decodes one token at a time until EOS
/// or the length limit. Returns tokens without BOS/EOS. When `memory` is
/// given it is used as the previous segment and replaced by the new one.
TokenIds generate(const TokenIds& input_ids, std::size_t emotion_id, const ChatbotParams& params,
                  const GenerateOptions& options = {}, MemoryState* memory = nullptr);

}  // namespace eaxl
