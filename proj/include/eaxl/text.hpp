#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace eaxl {

// ---------------------------------------------------------------------------
// Emotion taxonomy: 32 fine-grained labels of the Empathetic Dialogues corpus
// grouped into 8 coarse emotions.

inline constexpr std::size_t kNumCoarseEmotions = 8;
inline constexpr std::size_t kNumFineEmotions = 32;

class EmotionTaxonomy {
 public:
  /// The fixed grouping shared by every component.
  static const EmotionTaxonomy& standard();

  const std::array<std::string_view, kNumCoarseEmotions>& coarse_labels() const { return coarse_; }
  const std::vector<std::string_view>& fine_labels() const { return fine_; }

  /// Coarse id of a fine label; throws DataError for unknown labels.
  std::size_t coarse_id(std::string_view fine) const;
  std::string_view coarse_label(std::string_view fine) const {
    return coarse_[coarse_id(fine)];
  }
  /// Coarse id of a coarse label name, if it is one.
  std::optional<std::size_t> find_coarse(std::string_view coarse) const;
  bool is_fine(std::string_view fine) const { return fine_to_coarse_.count(std::string(fine)) > 0; }
  /// Fine labels of one coarse group, in table order.
  std::vector<std::string_view> group(std::size_t coarse_id) const;

 private:
  EmotionTaxonomy();

  std::array<std::string_view, kNumCoarseEmotions> coarse_;
  std::vector<std::string_view> fine_;
  std::unordered_map<std::string, std::size_t> fine_to_coarse_;
};

// ---------------------------------------------------------------------------
// ED CSV rows

struct DialogueRecord {
  std::string conv_id;
  int utterance_idx = 1;
  std::string context_emotion;
  std::string prompt;
  int speaker_idx = 0;
  std::string utterance;
  std::string selfeval;
  std::string tags;

  friend bool operator==(const DialogueRecord&, const DialogueRecord&) = default;
};

struct CsvParseOptions {
  /// Skip malformed rows instead of failing; skipped rows are counted.
  bool skip_malformed = false;
};

struct CsvParseResult {
  std::vector<DialogueRecord> records;
  std::size_t skipped = 0;
};

inline constexpr std::string_view kEdHeader =
    "conv_id,utterance_idx,context,prompt,speaker_idx,utterance,selfeval,tags";

/// Parses header + comma-separated rows, unescaping "_comma_" inside fields.
CsvParseResult parse_ed_csv(std::string_view bytes, CsvParseOptions options = {});
CsvParseResult read_ed_csv(const std::string& path, CsvParseOptions options = {});
/// Writes the header and one row per record, escaping commas as "_comma_".
std::string serialize_ed_csv(const std::vector<DialogueRecord>& records);
void write_ed_csv(const std::string& path, const std::vector<DialogueRecord>& records);

// ---------------------------------------------------------------------------
// Normalization

/// Pluggable text normalizer (lowercasing, punctuation stripping, stemming).
class Normalizer {
 public:
  virtual ~Normalizer() = default;
  virtual std::string normalize(std::string_view text) const = 0;
  virtual std::string id() const = 0;
};

/// Lowercases, turns . , ! ? ; : " ( ) into spaces, keeps word-internal
/// apostrophes and strips the first matching suffix of
/// {ing, es, ed, ly, s} when at least 3 characters of stem remain.
class SuffixStemNormalizer final : public Normalizer {
 public:
  std::string normalize(std::string_view text) const override;
  std::string id() const override { return "suffix-stem-v1"; }
  static std::string stem(std::string_view word);
};

std::string normalize_text(std::string_view text);
std::vector<std::string> split_words(std::string_view text);

// ---------------------------------------------------------------------------
// Vocabulary

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kBosId = 2;
inline constexpr std::size_t kEosId = 3;
inline constexpr std::size_t kNumSpecials = 4;

using TokenIds = std::vector<std::size_t>;

class Vocabulary {
 public:
  /// Specials only.
  Vocabulary();
  /// Specials followed by `tokens` in order; throws on duplicates.
  explicit Vocabulary(const std::vector<std::string>& tokens);

  std::size_t size() const { return id_to_token_.size(); }
  /// UNK for out-of-vocabulary tokens.
  std::size_t id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(std::size_t id) const;
  /// Non-special tokens in id order.
  std::vector<std::string> regular_tokens() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::size_t> token_to_id_;
};

/// Tokens with frequency >= min_freq, the max_size - 4 most frequent kept,
/// ties broken lexicographically. `corpus` holds normalized texts.
Vocabulary build_vocab(const std::vector<std::string>& corpus, std::size_t min_freq,
                       std::size_t max_size);

/// Whitespace split of normalized text, OOV mapped to UNK, EOS appended.
TokenIds tokenize(std::string_view normalized, const Vocabulary& vocab);
/// Keeps the last `max_len` ids (the most recent context).
TokenIds truncate_left(TokenIds ids, std::size_t max_len);
/// Keeps the first `max_len` ids, with EOS forced into the final slot.
TokenIds truncate_right(TokenIds ids, std::size_t max_len);
/// Space-joined tokens; specials are dropped.
std::string detokenize(const TokenIds& ids, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Utterance / response pairs

inline constexpr std::size_t kDefaultMaxLen = 64;

struct UtterancePair {
  std::string conv_id;
  int input_turn = 0;
  std::string input_text;
  std::string response_text;
  std::string fine_emotion;
  std::size_t coarse_emotion_id = 0;
  TokenIds input_ids;
  TokenIds response_ids;
  /// Every response to the same input turn of the same conversation.
  std::vector<std::string> references;
};

/// Consecutive-turn pairs within each conversation (turn i -> turn i + 1),
/// labelled with the conversation's coarse emotion.
std::vector<UtterancePair> make_pairs(std::vector<DialogueRecord> records);

/// Normalizes and tokenizes both sides of every pair.
void encode_pairs(std::vector<UtterancePair>& pairs, const Vocabulary& vocab,
                  std::size_t max_len = kDefaultMaxLen);

/// Collapses pairs sharing (conv_id, input_turn) into one evaluation item.
std::vector<UtterancePair> group_eval_items(const std::vector<UtterancePair>& pairs);

/// Normalized input and response texts of all pairs, for build_vocab.
std::vector<std::string> pair_texts(const std::vector<UtterancePair>& pairs);

// Corpus cache: one JSON object per line with input_ids, response_ids,
// emotion_id and references.
void write_corpus_cache(std::ostream& out, const std::vector<UtterancePair>& pairs);
std::vector<UtterancePair> read_corpus_cache(std::istream& in);

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SynthOptions {
  /// Probability that an input's signature words belong to its own emotion;
  /// otherwise they come from a uniformly drawn emotion.
  double cue_rate = 1.0;
  /// Response keyed by the labelled emotion. When false it is keyed by the
  /// emotion group of the input's first signature word instead.
  bool emotion_dependent = true;
};

/// Five signature words per coarse emotion.
const std::array<std::array<std::string_view, 5>, kNumCoarseEmotions>& synth_signature_words();
/// Response template of one coarse emotion.
std::string synth_response(std::size_t coarse_id);

/// Two-turn conversations (input, response), pair k labelled with coarse
/// emotion k % 8, so any n that is a multiple of 8 is balanced.
std::vector<DialogueRecord> synth_corpus(std::uint64_t seed, std::size_t n_pairs,
                                         SynthOptions options = {});

}  // namespace eaxl
