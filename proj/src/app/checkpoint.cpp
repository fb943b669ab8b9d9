#include "eaxl/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

#include "eaxl/error.hpp"

namespace eaxl {

namespace {

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    out_.append(static_cast<const char*>(data), n);
  }
  template <typename T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float f) { uint(std::bit_cast<std::uint32_t>(f)); }
  template <typename Len>
  void str(std::string_view s) {
    if (s.size() > std::numeric_limits<Len>::max()) throw CheckpointError("checkpoint: string too long");
    uint(static_cast<Len>(s.size()));
    bytes(s.data(), s.size());
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::string_view take(std::size_t n) {
    if (in_.size() - pos_ < n) throw CheckpointError("corrupt checkpoint: truncated file");
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  T uint() {
    auto s = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  template <typename Len>
  std::string str() {
    return std::string(take(uint<Len>()));
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

template <typename P>
std::vector<NamedTensor> tensors_of(const P& params) {
  std::vector<NamedTensor> out;
  for (const Parameter* p : params.parameters()) out.push_back({p->name, p->value});
  return out;
}

template <typename P>
void fill_params(P& params, const std::vector<NamedTensor>& tensors) {
  std::map<std::string_view, const Tensor*> by_name;
  for (const auto& t : tensors) {
    if (!by_name.emplace(t.name, &t.value).second) {
      throw CheckpointError("corrupt checkpoint: duplicate tensor " + t.name);
    }
  }
  auto list = params.parameters();
  if (list.size() != tensors.size()) {
    throw CheckpointError("corrupt checkpoint: expected " + std::to_string(list.size()) +
                          " tensors, found " + std::to_string(tensors.size()));
  }
  for (Parameter* p : list) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw CheckpointError("corrupt checkpoint: missing tensor " + p->name);
    if (it->second->shape() != p->value.shape()) {
      throw CheckpointError("corrupt checkpoint: tensor " + p->name + " has shape " +
                            shape_to_string(it->second->shape()) + ", config implies " +
                            shape_to_string(p->value.shape()));
    }
    p->value = *it->second;
    p->grad = Tensor(p->value.shape());
  }
}

nlohmann::json vocab_json(const Vocabulary& vocab) { return vocab.regular_tokens(); }

Vocabulary vocab_from(const nlohmann::json& config) {
  try {
    return Vocabulary(config.at("vocab").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: bad vocabulary: ") + e.what());
  }
}

template <typename T>
T field(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.uint(kCheckpointVersion);
  w.str<std::uint16_t>(c.tag);
  w.str<std::uint32_t>(c.config.dump());
  w.uint(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.str<std::uint16_t>(t.name);
    const Shape& shape = t.value.shape();
    w.uint(static_cast<std::uint8_t>(shape.size()));
    for (std::size_t d : shape) w.uint(static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t.value.size(); ++i) w.f32(static_cast<float>(t.value[i]));
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError("corrupt checkpoint: bad magic");
  }
  r.take(4);
  const auto version = r.uint<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.tag = r.str<std::uint16_t>();
  try {
    c.config = nlohmann::json::parse(r.str<std::uint32_t>());
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(std::string("corrupt checkpoint: config: ") + e.what());
  }
  const auto count = r.uint<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str<std::uint16_t>();
    const auto rank = r.uint<std::uint8_t>();
    if (rank != 1 && rank != 2) {
      throw CheckpointError("corrupt checkpoint: tensor " + t.name + " has rank " + std::to_string(rank));
    }
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.uint<std::uint32_t>();
      if (d == 0) throw CheckpointError("corrupt checkpoint: zero dimension in " + t.name);
    }
    t.value = Tensor(shape);
    for (std::size_t k = 0; k < t.value.size(); ++k) t.value[k] = static_cast<Scalar>(r.f32());
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError("corrupt checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  const std::string bytes = encode_checkpoint(checkpoint);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw CheckpointError("cannot move checkpoint into place at " + path + ": " + ec.message());
  }
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

Checkpoint load_checkpoint(const std::string& path, std::string_view expected_tag) {
  Checkpoint c = load_checkpoint(path);
  if (c.tag != expected_tag) {
    throw CheckpointError("checkpoint " + path + " holds a '" + c.tag + "' model, expected '" +
                          std::string(expected_tag) + "'");
  }
  return c;
}

void quantize_to_f32(std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      p->value[i] = static_cast<Scalar>(static_cast<float>(p->value[i]));
    }
  }
}

nlohmann::json to_json(const ClassifierConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim},   {"hidden_size", c.hidden_size},
          {"dense_size", c.dense_size}, {"dropout", c.dropout},       {"max_len", c.max_len}};
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"n_enc_layers", c.n_enc_layers},
          {"n_dec_layers", c.n_dec_layers}, {"n_heads", c.n_heads},
          {"d_model", c.d_model},       {"d_ff", c.d_ff},
          {"mem_len", c.mem_len},       {"dropout", c.dropout},
          {"max_gen_len", c.max_gen_len}, {"max_len", c.max_len},
          {"fuse_emotion", c.fuse_emotion}};
}

ClassifierConfig classifier_config_from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  c.vocab_size = field(j, "vocab_size", c.vocab_size);
  c.embed_dim = field(j, "embed_dim", c.embed_dim);
  c.hidden_size = field(j, "hidden_size", c.hidden_size);
  c.dense_size = field(j, "dense_size", c.dense_size);
  c.dropout = field(j, "dropout", c.dropout);
  c.max_len = field(j, "max_len", c.max_len);
  return c;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = field(j, "vocab_size", c.vocab_size);
  c.n_enc_layers = field(j, "n_enc_layers", c.n_enc_layers);
  c.n_dec_layers = field(j, "n_dec_layers", c.n_dec_layers);
  c.n_heads = field(j, "n_heads", c.n_heads);
  c.d_model = field(j, "d_model", c.d_model);
  c.d_ff = field(j, "d_ff", c.d_ff);
  c.mem_len = field(j, "mem_len", c.mem_len);
  c.dropout = field(j, "dropout", c.dropout);
  c.max_gen_len = field(j, "max_gen_len", c.max_gen_len);
  c.max_len = field(j, "max_len", c.max_len);
  c.fuse_emotion = field(j, "fuse_emotion", c.fuse_emotion);
  return c;
}

Checkpoint make_checkpoint(const ClassifierParams& params, const Vocabulary& vocab) {
  Checkpoint c{std::string(kClassifierTag), to_json(params.config), tensors_of(params)};
  c.config["vocab"] = vocab_json(vocab);
  return c;
}

Checkpoint make_checkpoint(const ChatbotParams& params, const Vocabulary& vocab) {
  Checkpoint c{std::string(kChatbotTag), to_json(params.config), tensors_of(params)};
  c.config["vocab"] = vocab_json(vocab);
  return c;
}

LoadedClassifier classifier_from_checkpoint(const Checkpoint& c) {
  if (c.tag != kClassifierTag) {
    throw CheckpointError("checkpoint holds a '" + c.tag + "' model, expected 'classifier'");
  }
  try {
    LoadedClassifier out{init_classifier(classifier_config_from_json(c.config), 0), vocab_from(c.config)};
    fill_params(out.params, c.tensors);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: config: ") + e.what());
  } catch (const DimensionError& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
}

LoadedChatbot chatbot_from_checkpoint(const Checkpoint& c) {
  if (c.tag != kChatbotTag) {
    throw CheckpointError("checkpoint holds a '" + c.tag + "' model, expected 'chatbot'");
  }
  try {
    LoadedChatbot out{init_chatbot(model_config_from_json(c.config), 0), vocab_from(c.config)};
    fill_params(out.params, c.tensors);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: config: ") + e.what());
  } catch (const DimensionError& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
}

}  // namespace eaxl
