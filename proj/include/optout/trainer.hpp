#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "optout/data_model.hpp"
#include "optout/eval.hpp"
#include "optout/objectives.hpp"
#include "optout/toy_lm.hpp"

namespace optout {

/// Adam with decoupled weight decay and a constant learning rate.
class AdamW {
 public:
  AdamW(const ParamSet& layout, double lr, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  void step(ParamSet& params, const ParamSet& grad);
  std::size_t steps() const { return t_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  ParamSet m_, v_;
};

/// Which data feeds the retain term of the unlearning objective.
enum class RetainSource { neighbors_and_world, neighbors_only, world_only };

RetainSource parse_retain_source(const std::string& name);
std::string to_string(RetainSource source);

struct TrainConfig {
  std::size_t batch_size = 4;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  std::size_t epochs = 10;
  double eta = 0.1;
  double lambda_reg = 0.1;
  std::uint64_t seed = 0;
  Method method = Method::OPT_OUT;
  bool use_retain = true;
  RegMetric reg_metric = RegMetric::wasserstein;
  RetainSource retain_source = RetainSource::neighbors_and_world;
  double swd_p = 2.0;
  std::size_t swd_projections = 64;
  ot::Aggregation swd_aggregation = ot::Aggregation::mean;
  bool early_stopping = true;
  std::size_t eval_max_new_tokens = 24;

  void validate() const;
  /// The objective configuration this run optimizes (SWD seed left at 0).
  ObjectiveConfig objective() const;
};

struct PretrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 3e-3;
  double weight_decay = 0.0;
  std::size_t max_epochs = 300;
  std::size_t eval_every = 5;     // epochs between plateau checks
  std::size_t patience = 3;       // evaluations without >= min_improvement
  double min_improvement = 0.01;  // relative
  std::uint64_t seed = 0;
  bool include_forget = true;     // false trains the oracle model
  bool include_paraphrases = true;  // also fit q -> paraphrased answer

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss_total = 0.0;
  double loss_forget = 0.0;
  double loss_retain = 0.0;
  double loss_reg = 0.0;
  std::optional<double> val_fq;
  std::optional<double> val_rq;
  std::optional<double> val_score;        // early-stop metric
  std::optional<double> val_probability;  // pretraining plateau metric
};

struct RunRecord {
  std::string kind;  // "pretrain" or "unlearn"
  std::string method;
  std::string config_hash;
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  std::vector<std::string> checkpoint_paths;
  double wall_clock_seconds = 0.0;
  std::string error;  // non-empty when the run was aborted
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);
void to_json(nlohmann::json& j, const EpochRecord& e);
void to_json(nlohmann::json& j, const RunRecord& r);

std::string config_hash(const nlohmann::json& config);

struct EarlyStopDecision {
  bool stop = false;
  std::size_t best = 0;  // index into the scores seen so far
};

/// Stop as soon as a score falls below the previous one; best = argmax
/// (first on ties).
EarlyStopDecision early_stop_decision(std::span<const double> scores);

/// NLL training on forget (unless excluded) plus every retain and world record.
RunRecord pretrain(TransformerLM& model, const EntityBundle& bundle, const PretrainConfig& cfg,
                   const std::optional<std::filesystem::path>& checkpoint_file = {});

/// Runs cfg.method from the model's current parameters, which also serve as
/// theta0 and the reference model. Leaves the model at the best validated
/// epoch (the last one when early stopping is off). On a non-finite loss
/// the model is rolled back to the last good parameters and
/// RunRecord::error is set.
RunRecord unlearn(TransformerLM& model, const EntityBundle& bundle, const TrainConfig& cfg,
                  std::span<const std::string> idk_pool = {},
                  const std::optional<std::filesystem::path>& checkpoint_dir = {});

/// Prompt-only refusal baseline: prepends an instruction naming the entity.
ModelView guardrail_wrap(const TransformerLM& model, const std::string& entity);
std::string guardrail_prompt(const std::string& entity);

}  // namespace optout
