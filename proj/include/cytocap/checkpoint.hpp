#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cytocap/adapter.hpp"
#include "cytocap/vocab.hpp"
#include "json.hpp"

namespace cytocap {

// First and second moment estimates keyed by parameter name.
struct AdamMoments {
  std::map<std::string, Tensor<float>> m, v;
  std::uint64_t step = 0;
};

struct Checkpoint {
  Vocab vocab;
  LmWeights<float> lm;
  AdapterWeights<float> adapter;
  AdamMoments optimizer;
  nlohmann::json train_state = nlohmann::json::object();  // epoch, losses, hyperparameters
};

// "CCLM" container: magic, u16 version, u32 length + JSON header (model
// configs), then tagged sections {4-byte tag, u64 length, payload}:
// "VOCB" vocabulary, "LMWT" frozen LM tensors, "ADPT" adapter tensors, Adam
// moments and train state. Frozen LM bytes never depend on training.
inline constexpr std::uint16_t kCclmVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

// Raw section payloads by tag, in file order.
std::vector<std::pair<std::string, std::vector<std::uint8_t>>> read_sections(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_lm_weights(const LmWeights<float>& lm);
// SHA-256 of the serialized LM tensors.
std::string lm_weight_hash(const LmWeights<float>& lm);
std::string adapter_weight_hash(const AdapterWeights<float>& adapter);

nlohmann::json to_json(const LmConfig& c);
nlohmann::json to_json(const AdapterConfig& c);
LmConfig lm_config_from_json(const nlohmann::json& j);
AdapterConfig adapter_config_from_json(const nlohmann::json& j);

}  // namespace cytocap
