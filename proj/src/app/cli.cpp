#include "eaxl/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "eaxl/checkpoint.hpp"
#include "eaxl/error.hpp"
#include "eaxl/pipeline.hpp"
#include "eaxl/server.hpp"

namespace eaxl {

namespace {

using nlohmann::json;

// Values from a --config file. Keys mirror the long flag names; dashes and
// underscores are interchangeable.
class ConfigFile {
 public:
  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file " + path);
    try {
      values_ = json::parse(in);
    } catch (const json::parse_error& e) {
      throw DataError("config file " + path + ": " + e.what());
    }
    if (!values_.is_object()) throw DataError("config file " + path + " must hold a JSON object");
  }

  template <typename T>
  T pick(const std::optional<T>& flag, std::string key, T fallback) const {
    if (flag) return *flag;
    const json* v = find(key);
    if (!v) return fallback;
    try {
      return v->get<T>();
    } catch (const json::exception&) {
      throw DataError("config key '" + key + "' has the wrong type");
    }
  }

 private:
  const json* find(std::string key) const {
    if (values_.contains(key)) return &values_[key];
    for (char& c : key) c = c == '-' ? '_' : c;
    if (values_.contains(key)) return &values_[key];
    return nullptr;
  }

  json values_ = json::object();
};

struct CommonTrainFlags {
  std::string data;
  std::string out;
  std::string config;
  std::string metrics;
  bool skip_malformed = false;
  std::optional<std::size_t> epochs, batch, seed, min_freq, max_vocab, max_len;
  std::optional<double> lr, dropout;
};

void add_train_flags(CLI::App& cmd, CommonTrainFlags& f) {
  cmd.add_option("--data", f.data, "ED-format CSV with training dialogues")->required();
  cmd.add_option("--out", f.out, "Checkpoint path")->required();
  cmd.add_option("--config", f.config, "JSON file with flat keys mirroring the flags");
  cmd.add_option("--metrics", f.metrics, "Per-epoch JSONL metrics (default: <out>.metrics.jsonl)");
  cmd.add_option("--epochs", f.epochs);
  cmd.add_option("--batch", f.batch);
  cmd.add_option("--lr", f.lr);
  cmd.add_option("--dropout", f.dropout);
  cmd.add_option("--seed", f.seed);
  cmd.add_option("--min-freq", f.min_freq, "Minimum token frequency for the vocabulary");
  cmd.add_option("--max-vocab", f.max_vocab, "Vocabulary size cap, specials included");
  cmd.add_option("--max-len", f.max_len, "Token limit per utterance");
  cmd.add_flag("--skip-malformed", f.skip_malformed, "Drop malformed CSV rows instead of failing");
}

struct TrainSetup {
  std::vector<UtterancePair> pairs;
  Vocabulary vocab;
  std::size_t epochs, batch, seed, max_len;
  double lr, dropout;
  std::string metrics;
};

TrainSetup prepare_training(const CommonTrainFlags& f, const ConfigFile& cfg, std::ostream& err) {
  TrainSetup s;
  s.epochs = cfg.pick(f.epochs, "epochs", std::size_t{50});
  s.batch = cfg.pick(f.batch, "batch", std::size_t{64});
  s.seed = cfg.pick(f.seed, "seed", std::size_t{1});
  s.max_len = cfg.pick(f.max_len, "max-len", kDefaultMaxLen);
  s.lr = cfg.pick(f.lr, "lr", 1e-3);
  s.dropout = cfg.pick(f.dropout, "dropout", 0.1);
  s.metrics = f.metrics.empty() ? f.out + ".metrics.jsonl" : f.metrics;
  if (s.batch == 0) throw DataError("--batch must be positive");
  if (s.max_len < 2) throw DataError("--max-len must be at least 2");

  auto parsed = read_ed_csv(f.data, {.skip_malformed = f.skip_malformed});
  if (parsed.skipped > 0) err << "skipped " << parsed.skipped << " malformed rows\n";
  s.pairs = make_pairs(std::move(parsed.records));
  if (s.pairs.empty()) throw DataError(f.data + " has no utterance pairs");
  s.vocab = build_vocab(pair_texts(s.pairs), cfg.pick(f.min_freq, "min-freq", std::size_t{2}),
                        cfg.pick(f.max_vocab, "max-vocab", std::size_t{20000}));
  encode_pairs(s.pairs, s.vocab, s.max_len);
  return s;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

int train_classifier_cmd(const CommonTrainFlags& f, std::optional<std::size_t> embed_dim,
                         std::optional<std::size_t> hidden, std::optional<std::size_t> dense,
                         std::ostream& out, std::ostream& err) {
  ConfigFile cfg;
  if (!f.config.empty()) cfg.load(f.config);
  TrainSetup s = prepare_training(f, cfg, err);

  ClassifierConfig cc;
  cc.vocab_size = s.vocab.size();
  cc.embed_dim = cfg.pick(embed_dim, "embed-dim", cc.embed_dim);
  cc.hidden_size = cfg.pick(hidden, "hidden", cc.hidden_size);
  cc.dense_size = cfg.pick(dense, "dense", cc.dense_size);
  cc.dropout = s.dropout;
  cc.max_len = s.max_len;
  TrainConfig tc{.epochs = s.epochs, .batch_size = s.batch, .lr = s.lr, .seed = s.seed};

  auto result = train_classifier(classifier_examples(s.pairs, s.max_len), cc, tc);
  auto metrics = open_output(s.metrics);
  for (const auto& e : result.history) {
    metrics << json{{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}, {"wall_ms", e.wall_ms}}.dump()
            << '\n';
    out << "epoch " << e.epoch << "  loss " << e.loss << "  accuracy " << e.accuracy << '\n';
  }
  quantize_to_f32(result.params.parameters());
  save_checkpoint(make_checkpoint(result.params, s.vocab), f.out);
  out << "wrote " << f.out << '\n';
  return kExitOk;
}

struct ChatbotFlags {
  std::optional<std::size_t> enc_layers, dec_layers, heads, d_model, d_ff, mem_len, max_gen_len;
  bool no_fusion = false;
};

int train_chatbot_cmd(const CommonTrainFlags& f, const ChatbotFlags& m, std::ostream& out,
                      std::ostream& err) {
  ConfigFile cfg;
  if (!f.config.empty()) cfg.load(f.config);
  TrainSetup s = prepare_training(f, cfg, err);

  ModelConfig mc;
  mc.vocab_size = s.vocab.size();
  mc.n_enc_layers = cfg.pick(m.enc_layers, "enc-layers", mc.n_enc_layers);
  mc.n_dec_layers = cfg.pick(m.dec_layers, "dec-layers", mc.n_dec_layers);
  mc.n_heads = cfg.pick(m.heads, "heads", mc.n_heads);
  mc.d_model = cfg.pick(m.d_model, "d-model", mc.d_model);
  mc.d_ff = cfg.pick(m.d_ff, "d-ff", mc.d_ff);
  mc.mem_len = cfg.pick(m.mem_len, "mem-len", mc.mem_len);
  mc.max_gen_len = cfg.pick(m.max_gen_len, "max-gen-len", mc.max_gen_len);
  mc.max_len = s.max_len;
  mc.dropout = s.dropout;
  mc.fuse_emotion = !cfg.pick(m.no_fusion ? std::optional<bool>(true) : std::nullopt, "no-fusion", false);
  mc.validate();
  ChatbotTrainConfig tc{.epochs = s.epochs, .batch_size = s.batch, .lr = s.lr, .seed = s.seed};

  auto result = train_chatbot(s.pairs, mc, tc);
  auto metrics = open_output(s.metrics);
  for (const auto& e : result.history) {
    metrics << json{{"epoch", e.epoch}, {"loss", e.loss}, {"wall_ms", e.wall_ms}}.dump() << '\n';
    out << "epoch " << e.epoch << "  loss " << e.loss << '\n';
  }
  quantize_to_f32(result.params.parameters());
  save_checkpoint(make_checkpoint(result.params, s.vocab), f.out);
  out << "wrote " << f.out << '\n';
  return kExitOk;
}

std::optional<std::size_t> parse_emotion(const std::string& label) {
  if (label.empty()) return std::nullopt;
  auto id = EmotionTaxonomy::standard().find_coarse(label);
  if (!id) throw Error("--emotion: unknown coarse label '" + label + "'");
  return id;
}

std::string label_of(std::size_t id) {
  return std::string(EmotionTaxonomy::standard().coarse_labels()[id]);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Emotion-aware Transformer-XL chatbot"};
  app.require_subcommand(1);

  // synth
  std::string synth_out;
  std::size_t synth_pairs = 256, synth_seed = 1;
  double cue_rate = 1.0;
  bool emotion_independent = false;
  auto* synth = app.add_subcommand("synth", "Write a synthetic ED-format corpus");
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--pairs", synth_pairs);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--cue-rate", cue_rate)->check(CLI::Range(0.0, 1.0));
  synth->add_flag("--emotion-independent", emotion_independent,
                  "Key responses on the input's cue words instead of the label");

  // preprocess
  std::string pre_data, pre_out, pre_vocab;
  std::size_t pre_min_freq = 2, pre_max_vocab = 20000, pre_max_len = kDefaultMaxLen;
  bool pre_skip = false;
  auto* preprocess = app.add_subcommand("preprocess", "Encode a CSV corpus into a JSONL pair cache");
  preprocess->add_option("--data", pre_data)->required();
  preprocess->add_option("--out", pre_out)->required();
  preprocess->add_option("--vocab-out", pre_vocab, "Also write the vocabulary as a JSON array");
  preprocess->add_option("--min-freq", pre_min_freq);
  preprocess->add_option("--max-vocab", pre_max_vocab);
  preprocess->add_option("--max-len", pre_max_len);
  preprocess->add_flag("--skip-malformed", pre_skip);

  // train-classifier
  CommonTrainFlags clf_flags;
  std::optional<std::size_t> embed_dim, hidden, dense;
  auto* train_clf = app.add_subcommand("train-classifier", "Train the LSTM emotion classifier");
  add_train_flags(*train_clf, clf_flags);
  train_clf->add_option("--embed-dim", embed_dim);
  train_clf->add_option("--hidden", hidden);
  train_clf->add_option("--dense", dense);

  // train-chatbot
  CommonTrainFlags bot_flags;
  ChatbotFlags model_flags;
  auto* train_bot = app.add_subcommand("train-chatbot", "Train the emotion-fused chatbot");
  add_train_flags(*train_bot, bot_flags);
  train_bot->add_option("--enc-layers", model_flags.enc_layers);
  train_bot->add_option("--dec-layers", model_flags.dec_layers);
  train_bot->add_option("--heads", model_flags.heads);
  train_bot->add_option("--d-model", model_flags.d_model);
  train_bot->add_option("--d-ff", model_flags.d_ff);
  train_bot->add_option("--mem-len", model_flags.mem_len);
  train_bot->add_option("--max-gen-len", model_flags.max_gen_len);
  train_bot->add_flag("--no-fusion", model_flags.no_fusion, "Replace the emotion vector with zeros");

  // eval / generate / chat / serve
  std::string data, report, text, emotion, classifier_path, chatbot_path, host = "127.0.0.1";
  int port = 8080;
  bool sessions = false, eval_skip = false;
  auto* eval = app.add_subcommand("eval", "Score the pipeline with multi-reference BLEU-4");
  eval->add_option("--data", data)->required();
  eval->add_option("--report", report)->required();
  eval->add_flag("--skip-malformed", eval_skip);
  auto* gen = app.add_subcommand("generate", "Respond to one utterance");
  gen->add_option("--text", text)->required();
  gen->add_option("--emotion", emotion, "Coarse label that bypasses the classifier");
  auto* chat = app.add_subcommand("chat", "Interactive terminal conversation");
  chat->add_flag("--session", sessions, "Carry encoder memory across turns");
  auto* serve = app.add_subcommand("serve", "Serve the HTTP chat interface");
  serve->add_option("--port", port)->check(CLI::Range(0, 65535));
  serve->add_option("--host", host);
  serve->add_flag("--session", sessions, "Keep per-session memory for requests with a session_id");
  for (auto* cmd : {eval, gen, chat, serve}) {
    cmd->add_option("--classifier", classifier_path)->required();
    cmd->add_option("--chatbot", chatbot_path)->required();
  }

  std::vector<std::string> argv_storage = {"eaxl"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) {
      write_ed_csv(synth_out, synth_corpus(synth_seed, synth_pairs,
                                           {.cue_rate = cue_rate, .emotion_dependent = !emotion_independent}));
      out << "wrote " << synth_pairs << " pairs to " << synth_out << '\n';
    } else if (*preprocess) {
      auto parsed = read_ed_csv(pre_data, {.skip_malformed = pre_skip});
      auto pairs = make_pairs(std::move(parsed.records));
      const Vocabulary vocab = build_vocab(pair_texts(pairs), pre_min_freq, pre_max_vocab);
      encode_pairs(pairs, vocab, pre_max_len);
      auto cache = open_output(pre_out);
      write_corpus_cache(cache, pairs);
      if (!pre_vocab.empty()) open_output(pre_vocab) << json(vocab.regular_tokens()).dump() << '\n';
      out << pairs.size() << " pairs, vocabulary " << vocab.size() << ", " << parsed.skipped
          << " rows skipped\n";
    } else if (*train_clf) {
      return train_classifier_cmd(clf_flags, embed_dim, hidden, dense, out, err);
    } else if (*train_bot) {
      return train_chatbot_cmd(bot_flags, model_flags, out, err);
    } else if (*eval) {
      const Pipeline pipeline = Pipeline::load(classifier_path, chatbot_path);
      auto parsed = read_ed_csv(data, {.skip_malformed = eval_skip});
      const auto items = group_eval_items(make_pairs(std::move(parsed.records)));
      const EvalReport r = corpus_eval(PipelineResponder(pipeline), items);
      open_output(report) << r.to_json().dump(2) << '\n';
      out << r.summary();
    } else if (*gen) {
      const auto override_id = parse_emotion(emotion);
      const Pipeline pipeline = Pipeline::load(classifier_path, chatbot_path);
      const ChatReply reply = pipeline.respond(text, override_id);
      out << "emotion: " << label_of(reply.emotion_id) << '\n';
      out << "response: " << reply.response << '\n';
    } else if (*chat) {
      const Pipeline pipeline = Pipeline::load(classifier_path, chatbot_path);
      MemoryState memory;
      std::string line;
      while (std::getline(in, line)) {
        if (normalize_text(line).empty()) continue;
        const ChatReply reply = pipeline.respond(line, std::nullopt, sessions ? &memory : nullptr);
        out << '[' << label_of(reply.emotion_id) << "] " << reply.response << '\n' << std::flush;
      }
    } else if (*serve) {
      const Pipeline pipeline = Pipeline::load(classifier_path, chatbot_path);
      ChatService service(pipeline, sessions);
      const bool ok = serve_http(service, host, port, [&](int bound) {
        out << "listening on http://" << host << ':' << bound << '\n' << std::flush;
      });
      if (!ok) {
        err << "error: cannot listen on " << host << ':' << port << '\n';
        return kExitUsage;
      }
    }
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kExitCheckpoint;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace eaxl
