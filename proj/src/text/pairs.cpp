#include <algorithm>
#include <istream>
#include <map>
#include <ostream>

#include <json.hpp>

#include "eaxl/error.hpp"
#include "eaxl/text.hpp"

namespace eaxl {

std::vector<UtterancePair> make_pairs(std::vector<DialogueRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    if (a.conv_id != b.conv_id) return a.conv_id < b.conv_id;
    return a.utterance_idx < b.utterance_idx;
  });
  const auto& tax = EmotionTaxonomy::standard();
  std::vector<UtterancePair> pairs;
  std::size_t begin = 0;
  while (begin < records.size()) {
    std::size_t end = begin;
    while (end < records.size() && records[end].conv_id == records[begin].conv_id) ++end;
    // rows [begin, end) form one conversation, ordered by turn.
    for (std::size_t i = begin; i < end; ++i) {
      const auto& input = records[i];
      std::vector<const DialogueRecord*> responses;
      for (std::size_t j = begin; j < end; ++j) {
        if (records[j].utterance_idx == input.utterance_idx + 1) responses.push_back(&records[j]);
      }
      std::vector<std::string> refs;
      for (const auto* r : responses) refs.push_back(r->utterance);
      for (const auto* r : responses) {
        UtterancePair p;
        p.conv_id = input.conv_id;
        p.input_turn = input.utterance_idx;
        p.input_text = input.utterance;
        p.response_text = r->utterance;
        p.fine_emotion = input.context_emotion;
        p.coarse_emotion_id = tax.coarse_id(input.context_emotion);
        p.references = refs;
        pairs.push_back(std::move(p));
      }
    }
    begin = end;
  }
  return pairs;
}

void encode_pairs(std::vector<UtterancePair>& pairs, const Vocabulary& vocab, std::size_t max_len) {
  for (auto& p : pairs) {
    p.input_ids = truncate_left(tokenize(normalize_text(p.input_text), vocab), max_len);
    p.response_ids = truncate_right(tokenize(normalize_text(p.response_text), vocab), max_len);
  }
}

std::vector<UtterancePair> group_eval_items(const std::vector<UtterancePair>& pairs) {
  std::vector<UtterancePair> items;
  std::map<std::pair<std::string, int>, std::size_t> index;
  for (const auto& p : pairs) {
    const auto key = std::make_pair(p.conv_id, p.input_turn);
    if (index.emplace(key, items.size()).second) items.push_back(p);
  }
  return items;
}

std::vector<std::string> pair_texts(const std::vector<UtterancePair>& pairs) {
  std::vector<std::string> texts;
  texts.reserve(pairs.size() * 2);
  for (const auto& p : pairs) {
    texts.push_back(normalize_text(p.input_text));
    texts.push_back(normalize_text(p.response_text));
  }
  return texts;
}

void write_corpus_cache(std::ostream& out, const std::vector<UtterancePair>& pairs) {
  for (const auto& p : pairs) {
    nlohmann::json j;
    j["input_ids"] = p.input_ids;
    j["response_ids"] = p.response_ids;
    j["emotion_id"] = p.coarse_emotion_id;
    j["references"] = p.references;
    out << j.dump() << '\n';
  }
}

std::vector<UtterancePair> read_corpus_cache(std::istream& in) {
  std::vector<UtterancePair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      UtterancePair p;
      p.input_ids = j.at("input_ids").get<TokenIds>();
      p.response_ids = j.at("response_ids").get<TokenIds>();
      p.coarse_emotion_id = j.at("emotion_id").get<std::size_t>();
      p.references = j.at("references").get<std::vector<std::string>>();
      if (p.coarse_emotion_id >= kNumCoarseEmotions) throw DataError("emotion_id out of range");
      pairs.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw DataError("corpus cache line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pairs;
}

}  // namespace eaxl
