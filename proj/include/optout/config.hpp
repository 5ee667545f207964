#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "optout/attacks.hpp"
#include "optout/pipeline.hpp"
#include "optout/toy_lm.hpp"
#include "optout/trainer.hpp"

namespace optout {

struct EvalConfig {
  std::size_t max_new_tokens = 24;
  bool ks_oracle = true;  // pretrain a forget-free model for the KS forget quality
};

struct MatrixConfig {
  std::vector<std::uint64_t> targets{1};  // synthetic world seeds, one target each
  std::vector<std::string> methods{"PRETRAINED", "GUARDRAIL", "GA",  "GA+RT",  "NPO",
                                   "NPO+RT",     "DPO+RT",    "IDK+RT", "OPT_OUT"};
  std::vector<std::uint64_t> seeds{0};
};

/// One file drives every stage. Single-cell verbs use target
/// prepare.world.seed, method `method` and seed train.seed.
struct ExperimentConfig {
  std::string run_dir = "runs/default";
  std::string backend = "mock";  // "mock" or "http" (reads the OPTOUT_* environment)
  std::string method = "OPT_OUT";
  PrepareConfig prepare;
  ModelConfig model;
  PretrainConfig pretrain;
  TrainConfig train;
  EvalConfig eval;
  MIAOptions mia;
  MatrixConfig matrix;
};

void to_json(nlohmann::json& j, const PrepareConfig& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Keys absent from the defaults raise ConfigError, as do ill-typed values.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);

/// "a.b.c=value": value is parsed as JSON when possible, else kept as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Reads the JSON file (ConfigError when missing or malformed), applies the
/// overrides in order and parses.
ExperimentConfig load_experiment_config(const std::filesystem::path& file,
                                        const std::vector<std::string>& overrides = {});

}  // namespace optout
