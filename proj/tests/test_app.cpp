#include <doctest.h>
#include <httplib.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "eaxl/checkpoint.hpp"
#include "eaxl/cli.hpp"
#include "eaxl/error.hpp"
#include "eaxl/pipeline.hpp"
#include "eaxl/server.hpp"
#include "support/checks.hpp"

using namespace eaxl;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args, const std::string& input = "") {
  std::istringstream in(input);
  std::ostringstream out, err;
  const int code = run_cli(args, in, out, err);
  return {code, out.str(), err.str()};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

/// Temporary directory holding a synthetic corpus and a trained model pair.
struct Workspace {
  fs::path dir;
  std::string data, clf, bot;

  Workspace() {
    dir = fs::temp_directory_path() / ("eaxl_unit_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    data = (dir / "synth.csv").string();
    clf = (dir / "clf.ckpt").string();
    bot = (dir / "bot.ckpt").string();
    REQUIRE(cli({"synth", "--out", data, "--pairs", "400", "--seed", "1"}).code == 0);
    REQUIRE(cli({"train-classifier", "--data", data, "--out", clf, "--epochs", "30", "--batch", "16", "--lr",
                 "5e-3", "--min-freq", "1", "--embed-dim", "32", "--hidden", "32", "--dense", "32"})
                .code == 0);
    REQUIRE(cli({"train-chatbot", "--data", data, "--out", bot, "--epochs", "8", "--batch", "16", "--lr", "3e-3",
                 "--dropout", "0", "--min-freq", "1", "--d-model", "32", "--heads", "2", "--enc-layers", "1",
                 "--dec-layers", "1", "--d-ff", "64", "--mem-len", "8", "--max-gen-len", "12"})
                .code == 0);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

Workspace& workspace() {
  static Workspace ws;
  return ws;
}

std::uint64_t checksum(const Pipeline& p) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const std::vector<const Parameter*>& list) {
    for (const Parameter* q : list) {
      for (Scalar v : q->value.values()) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        h = (h ^ bits) * 1099511628211ULL;
      }
    }
  };
  mix(p.classifier().parameters());
  mix(p.chatbot().parameters());
  return h;
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip is bitwise for both tags") {
    ChatbotParams bot = init_chatbot(checks::tiny_model_config(16), 3);
    ClassifierParams clf = init_classifier({.vocab_size = 16, .embed_dim = 4, .hidden_size = 4, .dense_size = 4}, 3);
    quantize_to_f32(bot.parameters());
    quantize_to_f32(clf.parameters());
    const Vocabulary vocab({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l"});

    const auto loaded_bot = chatbot_from_checkpoint(decode_checkpoint(encode_checkpoint(make_checkpoint(bot, vocab))));
    CHECK(loaded_bot.vocab == vocab);
    const auto a = bot.parameters();
    const auto b = loaded_bot.params.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i]->name == b[i]->name);
      CHECK(a[i]->value == b[i]->value);
    }
    const TokenIds in = {4, 5, 6, kEosId};
    CHECK(generate(in, 3, bot) == generate(in, 3, loaded_bot.params));

    const auto loaded_clf =
        classifier_from_checkpoint(decode_checkpoint(encode_checkpoint(make_checkpoint(clf, vocab))));
    CHECK(classify(in, clf) == classify(in, loaded_clf.params));
    CHECK(loaded_clf.params.config.hidden_size == 4);
  }

  TEST_CASE("header layout") {
    Checkpoint c{"chatbot", {{"k", 1}}, {{"w", Tensor::vector({1.5, -2})}}};
    const std::string bytes = encode_checkpoint(c);
    CHECK(bytes.substr(0, 4) == "EAXL");
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);
    CHECK(bytes[5] == 0);
    const float tail[2] = {1.5f, -2.0f};
    CHECK(std::memcmp(bytes.data() + bytes.size() - 8, tail, 8) == 0);
  }

  TEST_CASE("corrupt inputs") {
    Checkpoint c{"classifier", {{"k", 1}}, {{"w", Tensor::vector({1, 2, 3})}}};
    const std::string bytes = encode_checkpoint(c);
    auto message = [](std::string_view b) {
      try {
        decode_checkpoint(b);
      } catch (const CheckpointError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() - 1}) {
      CHECK(message(bytes.substr(0, cut)).find("corrupt checkpoint") != std::string::npos);
    }
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK(message(bad).find("magic") != std::string::npos);
    bad = bytes;
    bad[4] = 9;
    CHECK(message(bad).find("version") != std::string::npos);
    CHECK_FALSE(message(bytes + "x").empty());
  }

  TEST_CASE("files, tags and missing paths") {
    const fs::path dir = fs::temp_directory_path() / ("eaxl_ckpt_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const std::string path = (dir / "m.ckpt").string();
    save_checkpoint({"classifier", {{"k", 1}}, {{"w", Tensor::vector({1})}}}, path);
    CHECK(fs::exists(path));
    CHECK_FALSE(fs::exists(path + ".tmp"));
    CHECK(load_checkpoint(path, kClassifierTag).tensors.size() == 1);
    try {
      load_checkpoint(path, kChatbotTag);
      FAIL("expected a tag mismatch");
    } catch (const CheckpointError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("classifier") != std::string::npos);
      CHECK(msg.find("chatbot") != std::string::npos);
    }
    CHECK_THROWS_AS(load_checkpoint((dir / "none.ckpt").string()), CheckpointError);
    fs::remove_all(dir);
  }

  TEST_CASE("tensor table mismatches") {
    ChatbotParams bot = init_chatbot(checks::tiny_model_config(16), 3);
    Checkpoint c = make_checkpoint(bot, Vocabulary({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l"}));
    Checkpoint missing = c;
    missing.tensors.pop_back();
    CHECK_THROWS_AS(chatbot_from_checkpoint(missing), CheckpointError);
    Checkpoint reshaped = c;
    reshaped.tensors.front().value = Tensor({2, 2});
    CHECK_THROWS_AS(chatbot_from_checkpoint(reshaped), CheckpointError);
    CHECK_THROWS_AS(classifier_from_checkpoint(c), CheckpointError);
  }
}

TEST_SUITE("cli") {
  TEST_CASE("usage errors") {
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({"generate", "--text", "hi"}).code == kExitUsage);
    CHECK(cli({"--help"}).code == kExitOk);
  }

  TEST_CASE("train-chatbot for one epoch") {
    const Workspace& ws = workspace();
    const std::string out = (ws.dir / "one.ckpt").string();
    const auto r = cli({"train-chatbot", "--data", ws.data, "--out", out, "--epochs", "1", "--d-model", "16",
                        "--heads", "2", "--enc-layers", "1", "--dec-layers", "1", "--d-ff", "16"});
    CHECK(r.code == kExitOk);
    CHECK(fs::exists(out));
    std::ifstream metrics(out + ".metrics.jsonl");
    std::vector<nlohmann::json> lines;
    for (std::string line; std::getline(metrics, line);) lines.push_back(nlohmann::json::parse(line));
    REQUIRE(lines.size() == 1);
    CHECK(lines[0].at("epoch") == 1);
    CHECK(lines[0].contains("loss"));
    CHECK(lines[0].contains("wall_ms"));
  }

  TEST_CASE("same seed gives the same checkpoint bytes") {
    const Workspace& ws = workspace();
    std::vector<std::string> args = {"train-classifier", "--data", ws.data, "--epochs", "2", "--embed-dim", "8",
                                     "--hidden", "8", "--dense", "8", "--seed", "5", "--out"};
    auto a = args, b = args;
    a.push_back((ws.dir / "a.ckpt").string());
    b.push_back((ws.dir / "b.ckpt").string());
    REQUIRE(cli(a).code == 0);
    REQUIRE(cli(b).code == 0);
    CHECK(read_file(ws.dir / "a.ckpt") == read_file(ws.dir / "b.ckpt"));
    std::string ma = read_file(ws.dir / "a.ckpt.metrics.jsonl"), mb = read_file(ws.dir / "b.ckpt.metrics.jsonl");
    CHECK(nlohmann::json::parse(ma.substr(0, ma.find('\n'))).at("loss") ==
          nlohmann::json::parse(mb.substr(0, mb.find('\n'))).at("loss"));
    const auto first = nlohmann::json::parse(ma.substr(0, ma.find('\n')));
    CHECK(first.contains("accuracy"));
  }

  TEST_CASE("config file sits between flags and defaults") {
    const Workspace& ws = workspace();
    const fs::path cfg = ws.dir / "cfg.json";
    std::ofstream(cfg) << R"({"epochs": 3, "embed_dim": 8, "hidden": 8, "dense": 8, "batch": 64})";
    const std::string out = (ws.dir / "cfg.ckpt").string();
    REQUIRE(cli({"train-classifier", "--data", ws.data, "--config", cfg.string(), "--epochs", "2", "--out", out})
                .code == 0);
    std::ifstream metrics(out + ".metrics.jsonl");
    std::size_t n = 0;
    for (std::string line; std::getline(metrics, line);) ++n;
    CHECK(n == 2);
    const auto loaded = classifier_from_checkpoint(load_checkpoint(out));
    CHECK(loaded.params.config.hidden_size == 8);
    CHECK(loaded.params.config.dense_size == 8);
  }

  TEST_CASE("missing or swapped checkpoints exit 3") {
    const Workspace& ws = workspace();
    const std::string missing = (ws.dir / "nope.ckpt").string();
    CHECK(cli({"eval", "--data", ws.data, "--report", (ws.dir / "r.json").string(), "--classifier", missing,
               "--chatbot", ws.bot})
              .code == kExitCheckpoint);
    CHECK(cli({"generate", "--text", "hello", "--classifier", ws.bot, "--chatbot", ws.clf}).code == kExitCheckpoint);
    CHECK(cli({"train-classifier", "--data", missing, "--out", missing}).code == kExitData);
  }

  TEST_CASE("chat tags the emotion of each line") {
    const Workspace& ws = workspace();
    const auto r = cli({"chat", "--classifier", ws.clf, "--chatbot", ws.bot}, "i was terrified all night\n");
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("[afraid]") != std::string::npos);
  }

  TEST_CASE("generate with and without an override") {
    const Workspace& ws = workspace();
    const auto r = cli({"generate", "--text", "i was terrified all night", "--classifier", ws.clf, "--chatbot", ws.bot});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("emotion: afraid") != std::string::npos);
    CHECK(r.out.find("response: ") != std::string::npos);
    const auto o = cli({"generate", "--text", "i was terrified all night", "--emotion", "grateful", "--classifier",
                        ws.clf, "--chatbot", ws.bot});
    CHECK(o.code == kExitOk);
    CHECK(o.out.find("emotion: grateful") != std::string::npos);
    CHECK(cli({"generate", "--text", "hi", "--emotion", "terrified", "--classifier", ws.clf, "--chatbot", ws.bot})
              .code == kExitUsage);
  }

  TEST_CASE("eval writes a report") {
    const Workspace& ws = workspace();
    const std::string test_csv = (ws.dir / "test.csv").string();
    REQUIRE(cli({"synth", "--out", test_csv, "--pairs", "32", "--seed", "2"}).code == 0);
    const std::string report = (ws.dir / "report.json").string();
    CHECK(cli({"eval", "--data", test_csv, "--report", report, "--classifier", ws.clf, "--chatbot", ws.bot}).code ==
          kExitOk);
    const auto j = nlohmann::json::parse(read_file(report));
    CHECK(j.at("item_count") == 32);
    CHECK(j.at("corpus_mean").get<double>() > 0.5);
  }
}

TEST_SUITE("server") {
  TEST_CASE("endpoints") {
    const Workspace& ws = workspace();
    const Pipeline pipeline = Pipeline::load(ws.clf, ws.bot);
    ChatService service(pipeline, true);
    httplib::Server server;
    install_routes(server, service);
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    httplib::Client client("127.0.0.1", port);

    auto health = client.Get("/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(nlohmann::json::parse(health->body) == nlohmann::json{{"status", "ok"}});
    CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");

    auto info = client.Get("/model-info");
    REQUIRE(info);
    const auto ij = nlohmann::json::parse(info->body);
    CHECK(ij.at("emotions").size() == 8);
    CHECK(ij.at("d_model") == 32);
    CHECK(ij.at("n_heads") == 2);
    CHECK(ij.at("vocab_size") == pipeline.chatbot_vocab().size());

    const std::uint64_t before = checksum(pipeline);
    std::vector<std::thread> burst;
    std::atomic<int> ok{0};
    for (int t = 0; t < 4; ++t) {
      burst.emplace_back([&, t] {
        httplib::Client c("127.0.0.1", port);
        for (int i = 0; i < 5; ++i) {
          nlohmann::json body = {{"text", "i got a new job"}};
          if (i % 2) body["session_id"] = "s" + std::to_string(t);
          auto r = c.Post("/chat", body.dump(), "application/json");
          if (r && r->status == 200) ++ok;
        }
      });
    }
    for (auto& t : burst) t.join();
    CHECK(ok == 20);
    CHECK(checksum(pipeline) == before);
    CHECK(service.session_count() == 4);

    auto chat = client.Post("/chat", R"({"text":"i got a new job"})", "application/json");
    REQUIRE(chat);
    CHECK(chat->status == 200);
    const auto cj = nlohmann::json::parse(chat->body);
    const auto& labels = EmotionTaxonomy::standard().coarse_labels();
    CHECK(std::find(labels.begin(), labels.end(), cj.at("emotion_coarse").get<std::string>()) != labels.end());
    CHECK_FALSE(cj.at("response").get<std::string>().empty());
    CHECK(cj.at("latency_ms").is_number_integer());
    CHECK(cj.at("emotion_probs").size() == 8);
    CHECK(cj.at("token_count").is_number_integer());

    auto over = client.Post("/chat", R"({"text":"i got a new job","emotion_override":"afraid"})", "application/json");
    REQUIRE(over);
    CHECK(over->status == 200);
    CHECK(nlohmann::json::parse(over->body).at("emotion_coarse") == "afraid");

    for (const char* body : {"{}", "not json", R"({"text":5})", R"({"text":"hi","emotion_override":"happy"})",
                             R"({"text":"?!"})", "[1]"}) {
      auto bad = client.Post("/chat", body, "application/json");
      REQUIRE(bad);
      CHECK(bad->status == 400);
      CHECK(nlohmann::json::parse(bad->body).contains("error"));
      CHECK(bad->get_header_value("Access-Control-Allow-Origin") == "*");
    }

    auto options = client.Options("/chat");
    REQUIRE(options);
    CHECK(options->status / 100 == 2);

    server.stop();
    thread.join();
  }

  TEST_CASE("busy port") {
    const int sock = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(sock >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    REQUIRE(::bind(sock, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
    REQUIRE(::listen(sock, 1) == 0);
    socklen_t len = sizeof addr;
    ::getsockname(sock, reinterpret_cast<sockaddr*>(&addr), &len);
    const int port = ntohs(addr.sin_port);

    const Workspace& ws = workspace();
    const auto r = cli({"serve", "--port", std::to_string(port), "--host", "127.0.0.1", "--classifier", ws.clf,
                        "--chatbot", ws.bot});
    CHECK(r.code == kExitUsage);
    ::close(sock);
  }
}
