#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "optout/common.hpp"

namespace optout {

/// One question/answer pair plus the alternative answers the truth-ratio
/// metric needs. perturbed_answers is either empty or exactly five entries.
struct QARecord {
  std::string question;
  std::string answer;
  std::string paraphrased_answer;
  std::vector<std::string> perturbed_answers;
  std::optional<std::string> idk_answer;
  std::string source_passage_id;

  static constexpr std::size_t kNumPerturbations = 5;

  /// Throws Error describing the first violated field constraint.
  void validate() const;
  bool has_perturbations() const { return !perturbed_answers.empty(); }

  friend bool operator==(const QARecord&, const QARecord&) = default;
};

/// Multiple-choice general-knowledge item (the "world" set).
struct WorldRecord {
  std::string question;
  std::vector<std::string> choices;
  int correct_index = 0;
  std::string paraphrased_answer;
  std::vector<std::string> perturbed_answers;

  void validate() const;
  const std::string& correct_answer() const {
    return choices.at(static_cast<std::size_t>(correct_index));
  }
  /// View as a plain QA pair answered by the correct choice.
  QARecord as_qa() const;

  friend bool operator==(const WorldRecord&, const WorldRecord&) = default;
};

struct NamedEntity {
  std::string name;
  std::string id;

  friend bool operator==(const NamedEntity&, const NamedEntity&) = default;
};

struct NeighborEntity {
  NamedEntity entity;
  std::vector<QARecord> records;

  friend bool operator==(const NeighborEntity&, const NeighborEntity&) = default;
};

template <typename T>
struct Splits {
  std::vector<T> train;
  std::vector<T> valid;
  std::vector<T> test;

  std::size_t total() const { return train.size() + valid.size() + test.size(); }
  friend bool operator==(const Splits&, const Splits&) = default;
};

struct SplitOptions {
  std::array<int, 3> ratios{8, 1, 1};
  std::uint64_t seed = 7;
  bool per_entity_split = false;

  friend bool operator==(const SplitOptions&, const SplitOptions&) = default;
};

/// A target's forget set together with its neighbors' retain data and the
/// world set, already partitioned into train/valid/test.
struct EntityBundle {
  NamedEntity target;
  std::vector<QARecord> forget_set;
  std::vector<NeighborEntity> neighbor_entities;
  std::vector<WorldRecord> world_set;  // full pool in source order
  Splits<QARecord> retain_splits;
  Splits<WorldRecord> world_splits;
  SplitOptions split_options;

  /// Recomputes both split partitions from the neighbor/world pools.
  static EntityBundle assemble(NamedEntity target, std::vector<QARecord> forget,
                               std::vector<NeighborEntity> neighbors,
                               std::vector<WorldRecord> world, SplitOptions options);

  /// Throws IntegrityError on forget/retain overlap or duplicate retain records.
  void check_integrity() const;

  std::vector<QARecord> all_retain_records() const;
  std::vector<WorldRecord> all_world_records() const;

  friend bool operator==(const EntityBundle&, const EntityBundle&) = default;
};

/// Deterministic partition by the given ratios. The valid and test parts get
/// floor(n * r / sum) records (at least one each); the remainder goes to train.
template <typename T>
Splits<T> make_splits(const std::vector<T>& records, const std::array<int, 3>& ratios,
                      std::uint64_t seed);

extern template Splits<QARecord> make_splits(const std::vector<QARecord>&,
                                             const std::array<int, 3>&, std::uint64_t);
extern template Splits<WorldRecord> make_splits(const std::vector<WorldRecord>&,
                                                const std::array<int, 3>&, std::uint64_t);

/// ceil(k_ratio * |forget|) records from the retain-train pool; without
/// replacement when the pool is large enough, with replacement otherwise.
std::vector<QARecord> sample_retain_batchset(const EntityBundle& bundle, double k_ratio,
                                             std::uint64_t seed);

/// Record identity used for disjointness: normalized question and answer.
std::string record_key(const QARecord& record);

// ----------------------------- serialization -----------------------------

void to_json(nlohmann::json& j, const QARecord& r);
void from_json(const nlohmann::json& j, QARecord& r);
void to_json(nlohmann::json& j, const WorldRecord& r);
void from_json(const nlohmann::json& j, WorldRecord& r);

/// Reads a corpus directory (manifest.json, forget.jsonl, retain_<id>.jsonl,
/// world.jsonl) and validates every invariant.
EntityBundle load_corpus(const std::filesystem::path& dir);

/// Writes the corpus layout read by load_corpus.
void save_corpus(const EntityBundle& bundle, const std::filesystem::path& dir);

/// Writes `content` to a sibling temp file, then renames it into place.
void write_file_atomic(const std::filesystem::path& file, const std::string& content);
/// Throws LoadError when the file cannot be opened.
std::string read_file(const std::filesystem::path& file);

/// One JSON object per line; blank lines are skipped. Parse and schema
/// failures raise LoadError naming the file and 1-based line.
template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& file) {
  const std::string content = read_file(file);
  std::vector<T> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string::npos) {
      end = content.size();
    }
    ++line_no;
    const std::string line = content.substr(start, end - start);
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      out.push_back(nlohmann::json::parse(line).get<T>());
    } catch (const std::exception& e) {
      throw LoadError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
void write_jsonl(const std::vector<T>& records, const std::filesystem::path& file) {
  std::string content;
  for (const auto& r : records) {
    content += nlohmann::json(r).dump();
    content += '\n';
  }
  write_file_atomic(file, content);
}

}  // namespace optout
