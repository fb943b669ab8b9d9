#include "checks.hpp"

#include <chrono>
#include <cmath>

#include "eaxl/gradcheck.hpp"
#include "oracles.hpp"

namespace checks {

using namespace eaxl;

namespace {

constexpr double kStep = 1e-5;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2, double hi = 2) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

// Values at least `margin` away from zero.
Tensor away_from_zero(Shape shape, Rng& rng, double margin) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (auto& v : t.values()) {
    if (std::abs(v) < margin) v = v < 0 ? -0.5 : 0.5;
  }
  return t;
}

// sum(y * W) with W a fixed pseudo-random tensor of y's shape.
Var weighted_sum(Tape& tape, Var y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, tape.constant(random_tensor(y.shape(), rng, -1, 1))));
}

void randomize(std::span<Parameter* const> params, Rng& rng, double scale) {
  for (Parameter* p : params) {
    for (auto& v : p->value.values()) v = static_cast<Scalar>(rng.uniform(-scale, scale));
  }
}

std::vector<Parameter*> rel_params(RelAttentionParams& a) {
  return {&a.wq, &a.wk, &a.wv, &a.wo, &a.wr, &a.u, &a.v, &a.ln_gain, &a.ln_bias};
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::vector<NamedError> gradient_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<NamedError> out;
  auto check = [&](const std::string& name, const Tensor& x, const ScalarFn& f) {
    const auto r = finite_diff_check(f, x, kStep);
    out.push_back({name, r.max_rel_error, "", r.analytic, r.numeric});
  };
  const Tensor a34 = random_tensor({3, 4}, rng);
  const Tensor b45 = random_tensor({4, 5}, rng);
  const Tensor c34 = random_tensor({3, 4}, rng);
  const Tensor row4 = random_tensor({4}, rng);

  check("matmul/lhs", a34, [&](Tape& t, Var x) { return weighted_sum(t, matmul(x, t.constant(b45)), 1); });
  check("matmul/rhs", b45, [&](Tape& t, Var x) { return weighted_sum(t, matmul(t.constant(a34), x), 2); });
  check("add", a34, [&](Tape& t, Var x) { return weighted_sum(t, add(x, t.constant(c34)), 3); });
  check("sub/lhs", a34, [&](Tape& t, Var x) { return weighted_sum(t, sub(x, t.constant(c34)), 4); });
  check("sub/rhs", a34, [&](Tape& t, Var x) { return weighted_sum(t, sub(t.constant(c34), x), 5); });
  check("mul", a34, [&](Tape& t, Var x) { return weighted_sum(t, mul(x, t.constant(c34)), 6); });
  check("mul/self", a34, [&](Tape& t, Var x) { return weighted_sum(t, mul(x, x), 7); });
  check("scale", a34, [&](Tape& t, Var x) { return weighted_sum(t, scale(x, -1.7), 8); });
  check("add_row/bias", row4, [&](Tape& t, Var x) { return weighted_sum(t, add_row(t.constant(a34), x), 9); });
  check("mul_row/gain", row4, [&](Tape& t, Var x) { return weighted_sum(t, mul_row(t.constant(a34), x), 10); });
  check("mul_row/input", a34, [&](Tape& t, Var x) { return weighted_sum(t, mul_row(x, t.constant(row4)), 11); });
  check("concat_rows", a34, [&](Tape& t, Var x) {
    const Var parts[] = {x, t.constant(c34), x};
    return weighted_sum(t, concat_rows(parts), 12);
  });
  check("concat_cols", a34, [&](Tape& t, Var x) {
    const Var parts[] = {t.constant(c34), x};
    return weighted_sum(t, concat_cols(parts), 13);
  });
  check("slice_rows", a34, [&](Tape& t, Var x) { return weighted_sum(t, slice_rows(x, 1, 2), 14); });
  check("slice_cols", a34, [&](Tape& t, Var x) { return weighted_sum(t, slice_cols(x, 1, 2), 15); });
  check("transpose", a34, [&](Tape& t, Var x) { return weighted_sum(t, transpose(x), 16); });
  check("embedding", random_tensor({5, 3}, rng), [&](Tape& t, Var x) {
    const std::size_t ids[] = {1, 3, 1, 0};
    return weighted_sum(t, embedding(x, ids), 17);
  });
  check("gather_cols", random_tensor({3, 6}, rng), [&](Tape& t, Var x) {
    const std::size_t index[] = {5, 4, 4, 0, 1, 2, 3, 3, 0, 0, 5, 2};
    return weighted_sum(t, gather_cols(x, index, 4), 18);
  });
  check("sigmoid", a34, [&](Tape& t, Var x) { return weighted_sum(t, sigmoid(x), 19); });
  check("tanh", a34, [&](Tape& t, Var x) { return weighted_sum(t, eaxl::tanh(x), 20); });
  check("relu", away_from_zero({3, 4}, rng, 1e-2), [&](Tape& t, Var x) { return weighted_sum(t, relu(x), 21); });
  check("softmax/rows", a34, [&](Tape& t, Var x) { return weighted_sum(t, softmax(x, 1), 22); });
  check("softmax/cols", a34, [&](Tape& t, Var x) { return weighted_sum(t, softmax(x, 0), 23); });
  check("masked_softmax", a34, [&](Tape& t, Var x) {
    const std::vector<bool> allowed = {1, 0, 0, 0, 1, 1, 0, 1, 1, 1, 1, 1};
    return weighted_sum(t, masked_softmax(x, allowed), 24);
  });
  check("row_standardize", a34, [&](Tape& t, Var x) { return weighted_sum(t, row_standardize(x, 1e-5), 25); });
  check("dropout", a34, [&](Tape& t, Var x) {
    Rng mask_rng(99);
    return weighted_sum(t, dropout(x, 0.3, mask_rng, true), 26);
  });
  check("sum", a34, [&](Tape&, Var x) { return sum(mul(x, x)); });
  check("mean", a34, [&](Tape&, Var x) { return mean(mul(x, x)); });
  check("cross_entropy", random_tensor({4, 5}, rng), [&](Tape&, Var x) {
    const std::size_t targets[] = {1, 2, 4, 0};
    return cross_entropy(x, targets, 2);
  });

  {
    ClassifierConfig cc{.vocab_size = 20, .embed_dim = 8, .hidden_size = 8, .dense_size = 8, .dropout = 0};
    ClassifierParams params = init_classifier(cc, seed);
    auto list = params.parameters();
    randomize(list, rng, 0.5);
    const std::vector<TokenIds> batch = {{4, 7, 9, kEosId}, {12, kEosId}, {5, 19, 6, 8, 11, kEosId}};
    const std::size_t labels[] = {3, 0, 6};
    auto loss = [&](Tape& t) { return cross_entropy(classifier_logits(t, params, batch), labels, 99); };
    const auto r = finite_diff_check(loss, list, kStep);
    out.push_back({"classifier_loss", r.max_rel_error, "", r.analytic, r.numeric});
  }
  {
    ChatbotParams params = init_chatbot(tiny_model_config(16), seed);
    auto list = params.parameters();
    // Layer-norm gains stay near 1 so no block is switched off.
    for (Parameter* p : list) {
      const bool gain = p->name.ends_with("ln_gain");
      for (auto& v : p->value.values()) v = static_cast<Scalar>(gain ? rng.uniform(0.7, 1.3) : rng.uniform(-1, 1));
    }
    UtterancePair p1, p2;
    p1.input_ids = {4, 5, 6, kEosId};
    p1.response_ids = {7, 8, kEosId};
    p1.coarse_emotion_id = 1;
    p2.input_ids = {9, 10, kEosId};
    p2.response_ids = {11, 12, 13, 14, kEosId};
    p2.coarse_emotion_id = 5;
    const std::vector<const UtterancePair*> batch = {&p1, &p2};
    auto loss = [&](Tape& t) {
      ForwardContext ctx{t};
      return chatbot_loss(ctx, batch, params);
    };
    const auto r = finite_diff_check(loss, list, kStep);
    std::size_t flat = r.worst_index;
    std::string where;
    for (const Parameter* p : list) {
      if (flat < p->value.size()) {
        where = p->name + "[" + std::to_string(flat) + "]";
        break;
      }
      flat -= p->value.size();
    }
    out.push_back({"chatbot_loss", r.max_rel_error, where, r.analytic, r.numeric});
  }
  return out;
}

ModelConfig tiny_model_config(std::size_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 8;
  c.mem_len = 8;
  c.dropout = 0;
  c.max_gen_len = 8;
  c.max_len = 16;
  return c;
}

AttentionOracleResult attention_oracle(std::size_t instances, std::uint64_t seed) {
  Rng rng(seed);
  const ModelConfig config = tiny_model_config(16);
  AttentionOracleResult result;
  for (std::size_t n = 0; n < instances; ++n) {
    RelAttentionParams params = init_rel_attention(config, rng, "attn");
    randomize(rel_params(params), rng, 1.0);
    const std::size_t len = 1 + rng.below(8), m = rng.below(config.mem_len + 1);
    const bool causal = n % 2 == 1;
    const Tensor h = random_tensor({len, config.d_model}, rng);
    const Tensor mem = m > 0 ? random_tensor({m, config.d_model}, rng) : Tensor();

    Tape tape(false);
    ForwardContext ctx{tape};
    const Var y = rel_attention(ctx, tape.constant(h), m > 0 ? &mem : nullptr,
                                std::as_const(params), config, causal);
    const auto expect = oracle::rel_attention(oracle::to_matrix(h), m > 0 ? oracle::to_matrix(mem) : oracle::Matrix{},
                                              params, config.n_heads, causal);
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t c = 0; c < config.d_model; ++c) {
        result.max_abs_diff = std::max(result.max_abs_diff, std::abs(y.value().at(i, c) - expect[i][c]));
      }
    }
    ++result.instances;
  }
  return result;
}

double memory_detachment_gradient(std::uint64_t seed) {
  Rng rng(seed);
  const ChatbotParams params = init_chatbot(tiny_model_config(16), seed);
  Tape tape;
  ForwardContext ctx{tape};
  const Var seg1 = tape.leaf(random_tensor({5, 8}, rng));
  const EncoderOutput first = encoder_forward(ctx, seg1, nullptr, params);
  const Var seg2 = tape.leaf(random_tensor({4, 8}, rng));
  const EncoderOutput second = encoder_forward(ctx, seg2, &first.memory, params);
  tape.backward(weighted_sum(tape, second.hidden, 31));
  const Tensor grad = tape.grad(seg1);
  double worst = 0;
  for (Scalar g : grad.values()) worst = std::max(worst, std::abs(static_cast<double>(g)));
  return worst;
}

bool causal_invariance(std::uint64_t seed) {
  Rng rng(seed);
  const ModelConfig config = tiny_model_config(16);
  RelAttentionParams attn = init_rel_attention(config, rng, "attn");
  randomize(rel_params(attn), rng, 1.0);
  const std::size_t len = 6;
  const Tensor h = random_tensor({len, config.d_model}, rng);
  const Tensor mem = random_tensor({3, config.d_model}, rng);
  auto run = [&](const Tensor& input) {
    Tape tape(false);
    ForwardContext ctx{tape};
    return rel_attention(ctx, tape.constant(input), &mem, std::as_const(attn), config, true).value();
  };
  const Tensor base = run(h);
  for (std::size_t t = 0; t + 1 < len; ++t) {
    Tensor edited = h;
    for (std::size_t c = 0; c < config.d_model; ++c) edited.at(t + 1, c) += 0.75;
    const Tensor y = run(edited);
    for (std::size_t r = 0; r <= t; ++r) {
      for (std::size_t c = 0; c < config.d_model; ++c) {
        if (y.at(r, c) != base.at(r, c)) return false;
      }
    }
  }

  const ChatbotParams params = init_chatbot(config, seed);
  const Tensor enc = random_tensor({4, config.d_model}, rng);
  auto logits = [&](const TokenIds& prefix) {
    Tape tape(false);
    ForwardContext ctx{tape};
    return decoder_forward(ctx, prefix, tape.constant(enc), params).value();
  };
  const TokenIds prefix = {kBosId, 5, 6, 7, 8, 9};
  const Tensor ref = logits(prefix);
  for (std::size_t t = 0; t + 1 < prefix.size(); ++t) {
    TokenIds edited = prefix;
    edited[t + 1] = 15;
    const Tensor y = logits(edited);
    for (std::size_t r = 0; r <= t; ++r) {
      for (std::size_t c = 0; c < y.cols(); ++c) {
        if (y.at(r, c) != ref.at(r, c)) return false;
      }
    }
  }
  return true;
}

FusionStats fusion_contract(std::size_t inputs, std::uint64_t seed) {
  Rng rng(seed);
  FusionStats stats;
  const std::size_t widths[] = {8, 32, 256};
  for (std::size_t n = 0; n < inputs; ++n) {
    const std::size_t d = widths[n % 3], len = 1 + rng.below(6);
    Tape tape(false);
    const Var y = fuse_emotion(tape.constant(random_tensor({len, d}, rng)),
                               tape.constant(random_tensor({d}, rng)));
    for (std::size_t i = 0; i < len; ++i) {
      double mu = 0, var = 0;
      for (Scalar v : y.value().row(i)) mu += v;
      mu /= static_cast<double>(d);
      for (Scalar v : y.value().row(i)) var += (v - mu) * (v - mu);
      stats.max_abs_mean = std::max(stats.max_abs_mean, std::abs(mu));
      stats.max_abs_std_dev = std::max(stats.max_abs_std_dev, std::abs(std::sqrt(var / static_cast<double>(d)) - 1));
    }
  }
  Tape tape(false);
  const Var z = fuse_emotion(tape.constant(Tensor({3, 5}, 0.5)), tape.constant(Tensor({5}, -1.25)));
  stats.degenerate_zero = true;
  for (Scalar v : z.value().values()) stats.degenerate_zero &= v == 0;
  return stats;
}

std::vector<DialogueRecord> toy_corpus() {
  static const std::pair<const char*, const char*> kPairs[] = {
      {"we are going to the beach tomorrow", "bring sunscreen and have fun"},
      {"i heard a noise downstairs at night", "lock the door and call someone"},
      {"the kitchen smelled like rotten fish", "open every window right away"},
      {"my neighbor parked in my spot again", "leave a polite note on the car"},
      {"my friend drove me to the hospital", "keep that friend close forever"},
      {"my old dog passed away last week", "i am sorry for your loss"},
      {"my daughter learned to ride a bike", "what a big milestone for her"},
      {"the interview is on monday morning", "practice your answers out loud"},
      {"they threw me a surprise party", "that must have been a blast"},
      {"the storm knocked out our power", "stay safe and keep candles nearby"},
      {"i spilled soup on my boss", "that would make me blush too"},
      {"someone cut in line at the store", "people can be so rude"},
      {"a stranger returned my lost wallet", "there are good people out there"},
      {"i did not get the scholarship", "there will be other chances"},
      {"my brother finished his first marathon", "running that far is amazing"},
      {"i packed everything for the camping trip", "sounds like you thought of it all"},
  };
  const auto& tax = EmotionTaxonomy::standard();
  std::vector<DialogueRecord> records;
  for (std::size_t k = 0; k < std::size(kPairs); ++k) {
    const std::string fine(tax.group(k % kNumCoarseEmotions).front());
    const std::string conv = "toy:" + std::to_string(k);
    records.push_back({conv, 1, fine, "prompt", 1, kPairs[k].first, "", ""});
    records.push_back({conv, 2, fine, "prompt", 2, kPairs[k].second, "", ""});
  }
  return records;
}

OverfitResult overfit_toy(std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  auto pairs = make_pairs(toy_corpus());
  const Vocabulary vocab = build_vocab(pair_texts(pairs), 1, 1000);
  encode_pairs(pairs, vocab);

  ModelConfig config;
  config.vocab_size = vocab.size();
  config.n_enc_layers = 1;
  config.n_dec_layers = 1;
  config.n_heads = 2;
  config.d_model = 32;
  config.d_ff = 64;
  config.mem_len = 8;
  config.dropout = 0;
  config.max_gen_len = 16;
  const ChatbotTrainConfig train{.epochs = 100, .batch_size = 4, .lr = 3e-3, .seed = seed};
  auto trained = train_chatbot(pairs, config, train);

  OverfitResult r;
  r.steps = train.epochs * ((pairs.size() + train.batch_size - 1) / train.batch_size);
  std::vector<const UtterancePair*> all;
  for (const auto& p : pairs) all.push_back(&p);
  Tape tape(false);
  ForwardContext ctx{tape};
  r.final_loss = chatbot_loss(ctx, all, trained.params).value()[0];
  for (const auto& p : pairs) {
    const TokenIds target(p.response_ids.begin(), p.response_ids.end() - 1);
    r.exact += generate(p.input_ids, p.coarse_emotion_id, trained.params) == target;
  }
  r.total = pairs.size();
  r.seconds = seconds_since(start);
  return r;
}

ClassifierRun classifier_synth(std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  auto train = make_pairs(synth_corpus(1, 400));
  auto test = make_pairs(synth_corpus(2, 200));
  ClassifierRun run;
  run.vocab = build_vocab(pair_texts(train), 1, 5000);
  encode_pairs(train, run.vocab);
  encode_pairs(test, run.vocab);
  const ClassifierConfig config{.vocab_size = run.vocab.size(), .embed_dim = 32, .hidden_size = 32, .dense_size = 32};
  const TrainConfig tc{.epochs = 30, .batch_size = 16, .lr = 5e-3, .seed = seed};
  run.trained = train_classifier(classifier_examples(train), config, tc);
  run.train_accuracy = classifier_accuracy(run.trained.params, classifier_examples(train));
  run.heldout_accuracy = classifier_accuracy(run.trained.params, classifier_examples(test));
  run.seconds = seconds_since(start);
  return run;
}

double bleu_oracle_diff(std::size_t pairs, std::uint64_t seed) {
  Rng rng(seed);
  auto words = [&] {
    std::vector<std::string> w(1 + rng.below(20));
    for (auto& s : w) s = "w" + std::to_string(rng.below(10));
    return w;
  };
  double worst = 0;
  for (std::size_t n = 0; n < pairs; ++n) {
    const auto cand = words(), ref = words();
    worst = std::max(worst, std::abs(bleu4(cand, ref).score - oracle::bleu4(cand, ref)));
  }
  return worst;
}

AblationConfig ablation_config(bool emotion_dependent) {
  AblationConfig c;
  c.model.n_enc_layers = 1;
  c.model.n_dec_layers = 1;
  c.model.n_heads = 2;
  c.model.d_model = 32;
  c.model.d_ff = 64;
  c.model.mem_len = 8;
  c.model.dropout = 0;
  c.model.max_gen_len = 12;
  c.train = {.epochs = 20, .batch_size = 8, .lr = 3e-3};
  c.train_pairs = 128;
  c.eval_pairs = 64;
  // Inputs carry cue words of a random emotion, so only the label tells the
  // model which response is expected.
  c.corpus = {.cue_rate = 0.0, .emotion_dependent = emotion_dependent};
  return c;
}

const std::vector<std::pair<std::string, std::string>>& taxonomy_table() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"excited", "excited"},         {"surprised", "excited"},       {"joyful", "excited"},
      {"afraid", "afraid"},           {"terrified", "afraid"},        {"anxious", "afraid"},
      {"apprehensive", "afraid"},     {"disgusted", "disgusted"},     {"embarrassed", "disgusted"},
      {"guilty", "disgusted"},        {"ashamed", "disgusted"},       {"angry", "annoyed"},
      {"annoyed", "annoyed"},         {"jealous", "annoyed"},         {"furious", "annoyed"},
      {"faithful", "grateful"},       {"trusting", "grateful"},       {"grateful", "grateful"},
      {"caring", "grateful"},         {"hopeful", "grateful"},        {"sad", "disappointed"},
      {"disappointed", "disappointed"}, {"devastated", "disappointed"}, {"lonely", "disappointed"},
      {"nostalgic", "disappointed"},  {"sentimental", "disappointed"}, {"proud", "impressed"},
      {"impressed", "impressed"},     {"content", "impressed"},       {"anticipating", "prepared"},
      {"prepared", "prepared"},       {"confident", "prepared"},
  };
  return table;
}

}  // namespace checks
