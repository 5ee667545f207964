#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "optout/config.hpp"
#include "optout/eval.hpp"

namespace optout {

/// Matrix row name: PRETRAINED, GUARDRAIL, GA / NPO / DPO / IDK with an
/// optional "+RT", or OPT_OUT with an optional "@<metric>".
struct MethodSpec {
  enum class Kind { pretrained, guardrail, train };

  std::string name;
  Kind kind = Kind::train;
  Method method = Method::OPT_OUT;
  bool use_retain = true;
  RegMetric reg_metric = RegMetric::wasserstein;
};

/// `default_reg` is the metric an unqualified OPT_OUT uses.
MethodSpec parse_method_spec(const std::string& spec, RegMetric default_reg);
/// `base` with method, retain use and regularizer taken from the spec.
TrainConfig train_config_for(const TrainConfig& base, const MethodSpec& spec);

struct CellResult {
  std::uint64_t target = 0;
  std::string method;
  std::uint64_t seed = 0;
  MetricReport metrics;
  MIAResult mia;
  std::map<std::string, AttackTypeResult> adversarial;
};

/// File-backed pipeline over one run directory:
///   corpus/target_<t>/                  prepared corpus
///   checkpoints/pretrained-<hash>.ckpt  shared by every method of a target
///   cells/target_<t>/<method>/seed_<s>/ run_record.json, model.ckpt,
///                                       metrics.json, mia.json, adversarial.json
///   manifest.json, report.md, report.json
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }
  std::filesystem::path root() const { return cfg_.run_dir; }
  std::filesystem::path corpus_dir(std::uint64_t target) const;
  std::filesystem::path cell_dir(std::uint64_t target, const std::string& method,
                                 std::uint64_t seed) const;

  /// Regenerates and writes the corpus for `target`.
  PreparedCorpus prepare(std::uint64_t target) const;
  /// Loads the corpus, preparing it first when absent.
  PreparedCorpus corpus(std::uint64_t target) const;

  std::filesystem::path pretrained_path(std::uint64_t target, std::uint64_t seed,
                                        bool oracle) const;
  /// Loads the content-addressed checkpoint, training it first when absent.
  TransformerLM pretrained(std::uint64_t target, std::uint64_t seed, bool oracle = false) const;

  /// Unlearns from the shared pretrained checkpoint and saves the cell model.
  /// PRETRAINED and GUARDRAIL cells reuse the pretrained model unchanged.
  RunRecord unlearn(std::uint64_t target, const std::string& method, std::uint64_t seed) const;
  /// Test-split metrics of the cell model; writes metrics.json.
  MetricReport evaluate(std::uint64_t target, const std::string& method,
                        std::uint64_t seed) const;
  /// Membership inference and adversarial prompts; writes mia.json and adversarial.json.
  CellResult attack(std::uint64_t target, const std::string& method, std::uint64_t seed) const;
  /// unlearn + evaluate + attack.
  CellResult run_cell(std::uint64_t target, const std::string& method, std::uint64_t seed) const;

  /// Every (target, seed, method) cell; failing cells are recorded and
  /// skipped. Writes the manifest and the report; returns the report JSON.
  nlohmann::json run_matrix() const;

  /// Records the config (and the given cells) in manifest.json.
  void write_manifest(const std::vector<nlohmann::json>& cells) const;

 private:
  /// The model a cell is scored with, plus the prompt prefix it runs under.
  std::pair<TransformerLM, std::string> cell_model(std::uint64_t target, const std::string& method,
                                                   std::uint64_t seed) const;
  std::optional<std::vector<double>> oracle_truth_ratios(std::uint64_t target,
                                                         std::uint64_t seed) const;

  ExperimentConfig cfg_;
};

struct RenderedReport {
  nlohmann::json json;
  std::string markdown;
};

/// Scans run_dir/cells for metrics and renders per-method means (over
/// targets and seeds) in the forget/retain/world layout. Cells listed in the
/// manifest without metrics are reported as gaps (with a warning).
RenderedReport render_report(const std::filesystem::path& run_dir);
/// render_report written to report.md and report.json.
RenderedReport write_report(const std::filesystem::path& run_dir);

/// Stable hash of the corpus content (records, attacks, refusal pool).
std::string corpus_hash(const PreparedCorpus& corpus);

}  // namespace optout
