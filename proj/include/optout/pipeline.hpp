#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "optout/attacks.hpp"
#include "optout/data_model.hpp"
#include "optout/qa_gen.hpp"
#include "optout/synthetic_world.hpp"
#include "optout/tokenizer.hpp"

namespace optout {

struct PrepareConfig {
  WorldConfig world;
  SplitOptions split;
  double dedup_threshold = 0.9;
  std::size_t attacks_per_type = 20;
  std::uint64_t idk_seed = 0;
  GenerationOptions generation;
};

/// Everything an experiment reads from disk: the bundle, the attack corpus
/// and the refusal pool.
struct PreparedCorpus {
  EntityBundle bundle;
  std::vector<AttackRecord> attacks;
  std::vector<std::string> idk_pool;

  friend bool operator==(const PreparedCorpus&, const PreparedCorpus&) = default;
};

/// Synthetic world -> neighbor mining -> QA generation -> dedup ->
/// paraphrase/perturb -> splits -> IDK assignment -> attack prompts.
PreparedCorpus prepare_corpus(const PrepareConfig& cfg, CompletionBackend& backend);

/// Corpus layout plus attacks.jsonl and idk_pool.txt.
void save_prepared(const PreparedCorpus& corpus, const std::filesystem::path& dir);
/// attacks.jsonl and idk_pool.txt are optional (empty when absent).
PreparedCorpus load_prepared(const std::filesystem::path& dir);

/// Vocabulary over every string the corpus can put in front of the model,
/// including the guardrail instruction for the target.
Tokenizer build_vocabulary(const PreparedCorpus& corpus);

}  // namespace optout
