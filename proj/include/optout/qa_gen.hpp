#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "optout/data_model.hpp"
#include "optout/synthetic_world.hpp"

namespace optout {

enum class TemplateId { qa_pairs, paraphrase, perturb, attack };

TemplateId parse_template_id(const std::string& name);
std::string to_string(TemplateId id);

/// The nine adversarial prompt styles the attack template knows.
const std::vector<std::string>& attack_types();

struct GenRequest {
  TemplateId template_id = TemplateId::qa_pairs;
  std::string entity;
  std::string passage;              // qa_pairs
  std::string passage_id;           // qa_pairs
  std::optional<QARecord> record;   // paraphrase, perturb, attack
  std::optional<std::string> attack_type;
  std::size_t variant = 0;          // distinguishes repeated attack requests

  /// Throws ConfigError when the fields do not fit template_id.
  void validate() const;
  /// Stable text identifying the request (hashed for the cache).
  std::string canonical() const;
};

/// Prompt text sent to a live backend.
std::string render_prompt(const GenRequest& req);

/// Response could not be parsed after all retries.
class GenerationError : public Error {
 public:
  GenerationError(const std::string& message, std::string raw)
      : Error(message), raw_text(std::move(raw)) {}
  std::string raw_text;
};

/// Backend failure worth retrying (timeouts, rate limits, 5xx).
class TransientError : public Error {
 public:
  using Error::Error;
};

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual std::string name() const = 0;
  /// May throw TransientError (retried) or ConfigError (auth; not retried).
  virtual std::string complete(const GenRequest& req, const std::string& prompt) = 0;
};

/// Deterministic offline backend: answers from the synthetic relation
/// templates instead of reading the prompt.
class MockBackend : public CompletionBackend {
 public:
  explicit MockBackend(std::uint64_t seed = 0) : seed_(seed) {}
  std::string name() const override { return "mock"; }
  std::string complete(const GenRequest& req, const std::string& prompt) override;
  std::size_t calls() const { return calls_.load(); }

 private:
  std::uint64_t seed_;
  std::atomic<std::size_t> calls_{0};
};

/// OpenAI-style chat-completions endpoint over plain HTTP.
class HttpBackend : public CompletionBackend {
 public:
  /// Throws ConfigError when the URL is malformed or the key is empty.
  HttpBackend(std::string url, std::string api_key, std::string model = "gpt-4o",
              int timeout_seconds = 60);
  /// Reads OPTOUT_BACKEND_URL, OPTOUT_API_KEY and optionally OPTOUT_BACKEND_MODEL.
  static std::unique_ptr<HttpBackend> from_env();

  std::string name() const override { return "http:" + model_; }
  std::string complete(const GenRequest& req, const std::string& prompt) override;

 private:
  std::string host_;  // scheme://host:port
  std::string path_;
  std::string api_key_;
  std::string model_;
  int timeout_seconds_;
};

struct GenerationOptions {
  std::optional<std::filesystem::path> cache_dir;
  std::size_t max_retries = 3;
  std::chrono::milliseconds base_delay{200};  // doubled after each failed attempt
  std::size_t parallelism = 4;
};

/// Wraps a backend with an on-disk response cache, retries with
/// exponential backoff, response parsing and bounded parallelism.
class GenerationClient {
 public:
  GenerationClient(CompletionBackend& backend, GenerationOptions options = {});

  /// qa_pairs: parsed pairs (paraphrase = answer, no perturbations);
  /// paraphrase / perturb: the input record with that field filled;
  /// attack: the input record with the question replaced by the attack prompt.
  std::vector<QARecord> generate(const GenRequest& req);

  /// generate() over many requests, at most options.parallelism in flight;
  /// results keep input order. The first failure (by index) is rethrown.
  std::vector<std::vector<QARecord>> generate_many(const std::vector<GenRequest>& reqs);

  std::size_t cache_hits() const { return cache_hits_.load(); }

 private:
  std::optional<std::string> cache_read(const std::string& key) const;
  void cache_write(const std::string& key, const std::string& text);

  CompletionBackend& backend_;
  GenerationOptions options_;
  std::mutex cache_mutex_;
  std::atomic<std::size_t> cache_hits_{0};
};

// Response parsers; each throws GenerationError when nothing usable is found.
std::vector<std::pair<std::string, std::string>> parse_qa_pairs(const std::string& text);
std::string parse_single_line(const std::string& text);
std::vector<std::string> parse_perturbations(const std::string& text);

// ----------------------------- deduplication -----------------------------

using Embedder = std::function<std::vector<double>(const std::string&)>;

/// Signed feature hashing of the lowercased word tokens.
Embedder hashing_embedder(std::size_t dim = 256);

struct EmbeddingConfig {
  Embedder embedder = hashing_embedder();
  double dedup_threshold = 0.9;
  bool include_answer = false;  // embed "question answer" instead of the question

  void validate() const;
};

/// Greedy scan in input order: a record is dropped when its cosine
/// similarity to any kept record reaches the threshold. Zero embeddings are
/// kept with a warning.
std::vector<QARecord> dedup(const std::vector<QARecord>& records, const EmbeddingConfig& cfg);

// ----------------------------- neighbor mining -----------------------------

/// People linked from the target that link back, top k by views
/// (descending, then id). Warns when fewer than k qualify.
std::vector<std::string> mine_neighbors(const LinkGraph& graph, const std::string& target,
                                        std::size_t k = 10);

}  // namespace optout
