#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "optout/data_model.hpp"
#include "optout/eval.hpp"
#include "optout/toy_lm.hpp"

namespace optout {

struct AttackRecord {
  std::string attack_type;
  std::string prompt;
  std::string expected_answer;
  std::string paraphrased_answer;
  std::vector<std::string> perturbed_answers;

  void validate() const;
  /// The prompt takes the place of the question in every metric.
  QARecord as_qa() const;

  friend bool operator==(const AttackRecord&, const AttackRecord&) = default;
};

void to_json(nlohmann::json& j, const AttackRecord& r);
void from_json(const nlohmann::json& j, AttackRecord& r);

struct MIAOptions {
  std::size_t folds = 5;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  double l2 = 1e-3;  // ridge penalty on the standardized slope
};

struct MIAResult {
  double accuracy_mean = 0.0;  // percent
  double accuracy_std = 0.0;   // percent, over folds x seeds
  std::vector<double> fold_accuracies;
  std::size_t n_forget = 0;
  std::size_t n_test = 0;
  std::size_t folds = 0;

  friend bool operator==(const MIAResult&, const MIAResult&) = default;
};

void to_json(nlohmann::json& j, const MIAResult& r);

/// Per-record token-mean answer NLL.
std::vector<double> record_losses(const ModelView& model, std::span<const QARecord> records);

/// Stratified k-fold cross-validated logistic regression on one scalar
/// feature; class 0 = forget losses, class 1 = test losses. The reported
/// mean is floored at the majority-class rate. Folds shrink (with a
/// warning) when a class has fewer members than folds.
MIAResult mia_from_losses(std::span<const double> forget_losses,
                          std::span<const double> test_losses, const MIAOptions& options = {});

MIAResult mia_attack(const ModelView& model, std::span<const QARecord> forget_records,
                     std::span<const QARecord> paraphrased_test_records,
                     const MIAOptions& options = {});

/// Forget records with each answer replaced by its paraphrase: the
/// non-member class of the membership attack.
std::vector<QARecord> paraphrased_copies(std::span<const QARecord> records);

struct AttackTypeResult {
  SetMetrics metrics;
  double fq = 0.0;
};

/// Forget quality per attack type, keyed by tag. Records with an empty tag
/// are skipped with a warning.
std::map<std::string, AttackTypeResult> adversarial_eval(const ModelView& model,
                                                         std::span<const AttackRecord> attacks,
                                                         std::size_t max_new_tokens = 24);

void to_json(nlohmann::json& j, const std::map<std::string, AttackTypeResult>& r);

}  // namespace optout
