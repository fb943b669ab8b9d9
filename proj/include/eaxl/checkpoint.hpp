#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "eaxl/classifier.hpp"
#include "eaxl/model.hpp"
#include "eaxl/tensor.hpp"
#include "eaxl/text.hpp"

namespace eaxl {

inline constexpr char kCheckpointMagic[4] = {'E', 'A', 'X', 'L'};
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::string_view kClassifierTag = "classifier";
inline constexpr std::string_view kChatbotTag = "chatbot";

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Layout (little-endian): magic[4], u16 version, u16 tag length, tag,
// u32 config length, config JSON, u32 tensor count, then per tensor
// u16 name length, name, u8 rank, u32 dims[rank], f32 data[size].
struct Checkpoint {
  std::string tag;
  nlohmann::json config;
  std::vector<NamedTensor> tensors;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
/// Throws CheckpointError on bad magic, unknown version or truncation.
Checkpoint decode_checkpoint(std::string_view bytes);

/// Writes to a sibling temp file, then renames over `path`.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
/// Also rejects a checkpoint whose tag differs from `expected_tag`.
Checkpoint load_checkpoint(const std::string& path, std::string_view expected_tag);

/// Rounds every parameter value to the nearest 32-bit float, so that a later
/// save/load reproduces it exactly.
void quantize_to_f32(std::span<Parameter* const> params);

nlohmann::json to_json(const ClassifierConfig& config);
nlohmann::json to_json(const ModelConfig& config);
ClassifierConfig classifier_config_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j);

Checkpoint make_checkpoint(const ClassifierParams& params, const Vocabulary& vocab);
Checkpoint make_checkpoint(const ChatbotParams& params, const Vocabulary& vocab);

struct LoadedClassifier {
  ClassifierParams params;
  Vocabulary vocab;
};
struct LoadedChatbot {
  ChatbotParams params;
  Vocabulary vocab;
};

LoadedClassifier classifier_from_checkpoint(const Checkpoint& checkpoint);
LoadedChatbot chatbot_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace eaxl
