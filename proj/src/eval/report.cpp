#include <cstdio>
#include <exception>
#include <sstream>

#include "eaxl/error.hpp"
#include "eaxl/evaluation.hpp"

namespace eaxl {

EvalReport corpus_eval(const ResponseModel& model, const std::vector<UtterancePair>& items) {
  if (items.empty()) throw DataError("corpus_eval: empty evaluation set");
  EvalReport report;
  report.items.resize(items.size());
  std::vector<std::exception_ptr> errors(items.size());
  const auto n = static_cast<std::int64_t>(items.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      const auto& item = items[i];
      if (item.references.empty()) throw DataError("corpus_eval: item without references");
      EvalItemScore& s = report.items[i];
      s.input = item.input_text;
      s.response = model.respond(item);
      s.n_references = item.references.size();
      std::vector<Words> refs;
      for (const auto& r : item.references) refs.push_back(scoring_tokens(r));
      s.score = multi_ref_bleu(scoring_tokens(s.response), refs);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  double total = 0;
  for (const auto& s : report.items) total += s.score;
  report.item_count = report.items.size();
  report.corpus_mean = total / static_cast<double>(report.item_count);
  return report;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["corpus_mean"] = corpus_mean;
  j["item_count"] = item_count;
  j["smoothing"] = smoothing;
  j["tokenizer"] = tokenizer;
  auto& arr = j["items"] = nlohmann::json::array();
  for (const auto& s : items) {
    arr.push_back({{"input", s.input},
                   {"response", s.response},
                   {"references", s.n_references},
                   {"score", s.score}});
  }
  return j;
}

std::string EvalReport::summary() const {
  std::ostringstream os;
  char line[128];
  os << "BLEU-4 (mean of per-reference sentence scores)\n";
  std::snprintf(line, sizeof line, "  %-12s %zu\n", "items", item_count);
  os << line;
  std::snprintf(line, sizeof line, "  %-12s %.6f\n", "mean BLEU", corpus_mean);
  os << line;
  std::snprintf(line, sizeof line, "  %-12s %g\n", "smoothing", smoothing);
  os << line;
  os << "  tokenizer    " << tokenizer << '\n';
  return os.str();
}

std::string GoldEmotionResponder::respond(const UtterancePair& item) const {
  const TokenIds ids =
      truncate_left(tokenize(normalize_text(item.input_text), vocab_), params_.config.max_len);
  try {
    return detokenize(generate(ids, item.coarse_emotion_id, params_), vocab_);
  } catch (const DataError&) {
    return {};
  }
}

}  // namespace eaxl
