#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "optout/data_model.hpp"
#include "optout/toy_lm.hpp"

namespace optout {

// ----------------------------- per-record metrics -----------------------------

/// exp(log P(a|q) / |a|), |a| in answer tokens (including <eos>).
double answer_probability(const ModelView& model, const std::string& question,
                          const std::string& answer);
double answer_probability(const ModelView& model, const QARecord& record);

/// Length-normalized probability of the correct choice, renormalized over all choices.
double mc_probability(const ModelView& model, const WorldRecord& record);

/// Index of the choice with the highest length-normalized probability (lowest index on ties).
std::size_t mc_prediction(const ModelView& model, const WorldRecord& record);

/// LCS(prediction, reference) / |reference| over lowercased, punctuation-free tokens.
double rouge_l_recall(const std::string& prediction, const std::string& reference);

/// mean over perturbations of P(p|q)^(1/|p|), divided by P(para|q)^(1/|para|).
double truth_ratio(const ModelView& model, const std::string& question,
                   const std::string& paraphrased, std::span<const std::string> perturbed);
double truth_ratio(const ModelView& model, const QARecord& record);

// ----------------------------- aggregates -----------------------------

/// Harmonic mean; 0 when any value is 0. Values must be non-negative.
double harmonic_mean(std::span<const double> values);

struct SetMetrics {
  double probability = 0.0;
  double rouge_l = 0.0;
  double truth_ratio = 0.0;
  std::size_t count = 0;

  friend bool operator==(const SetMetrics&, const SetMetrics&) = default;
};

/// HM{max(0, 1 - prob), max(0, 1 - rouge), min(1, TR)}.
double forget_quality(const SetMetrics& forget);
/// HM{prob, rouge, max(0, 1 - TR)} over the retain and world sets (six values).
double retain_quality(const SetMetrics& retain, const SetMetrics& world);

// ----------------------------- KS test -----------------------------

struct KSResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool exact = false;
};

/// Two-sample Kolmogorov-Smirnov test. Uses the exact lattice-path
/// distribution (with a warning) when either sample has fewer than 5 values,
/// otherwise the asymptotic Kolmogorov distribution.
KSResult ks_two_sample(std::span<const double> a, std::span<const double> b);

/// KS p-value between truth-ratio samples of the unlearned and oracle models.
double ks_forget_quality(std::span<const double> tr_unlearned, std::span<const double> tr_oracle);

// ----------------------------- evaluation driver -----------------------------

enum class EvalSplit { valid, test };

struct EvalOptions {
  EvalSplit split = EvalSplit::test;
  std::size_t max_new_tokens = 24;
  bool truth_ratio = true;
  /// Forget-set truth ratios of the oracle model; enables fq_ks_pvalue.
  std::optional<std::vector<double>> oracle_forget_truth_ratios;
};

struct MetricReport {
  SetMetrics forget;
  SetMetrics retain;
  SetMetrics world;
  double fq = 0.0;
  double rq = 0.0;
  double utility = 0.0;
  std::optional<double> fq_ks_pvalue;
  std::vector<double> forget_truth_ratios;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

/// Scores the whole forget set, plus the retain and world records of the
/// chosen split. Throws Error listing records that lack perturbations when
/// truth ratios are requested.
MetricReport evaluate(const ModelView& model, const EntityBundle& bundle,
                      const EvalOptions& options = {});

/// Mean metrics over an arbitrary record list (used for attack prompts).
SetMetrics score_records(const ModelView& model, std::span<const QARecord> records,
                         std::size_t max_new_tokens, bool with_truth_ratio,
                         std::vector<double>* truth_ratios = nullptr);

void to_json(nlohmann::json& j, const SetMetrics& m);
void from_json(const nlohmann::json& j, SetMetrics& m);
void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

}  // namespace optout
