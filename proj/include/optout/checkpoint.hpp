#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "optout/toy_lm.hpp"

namespace optout {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Everything needed to rebuild a TransformerLM.
struct Checkpoint {
  ModelConfig config;
  Tokenizer tokenizer;
  ParamSnapshot snapshot;
  nlohmann::json metadata = nlohmann::json::object();

  TransformerLM build() const;
  static Checkpoint of(const TransformerLM& model, std::string tag,
                       nlohmann::json metadata = nlohmann::json::object());

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Binary layout: magic "OPTOUTCK", u32 version, u64 header length, JSON
/// header (config, vocabulary, tag, metadata, tensor names and shapes),
/// then every tensor as raw little-endian IEEE-754 doubles in header order.
std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws LoadError on a bad magic, unknown version, or truncated payload.
Checkpoint decode_checkpoint(const std::string& bytes);

/// Atomic write (temp file + rename).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

/// FNV-1a over the parameter bytes only; identical weights give identical hashes.
std::string params_hash(const ParamSet& params);

}  // namespace optout
