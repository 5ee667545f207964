#pragma once

#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "optout/data_model.hpp"
#include "optout/ot_core.hpp"
#include "optout/toy_lm.hpp"

namespace optout {

enum class Method { GA, DPO, NPO, IDK, OPT_OUT };
enum class RegMetric { none, wasserstein, manhattan, euclidean, chebyshev, cosine };

Method parse_method(const std::string& name);
std::string to_string(Method method);
RegMetric parse_reg_metric(const std::string& name);
std::string to_string(RegMetric metric);

struct ObjectiveConfig {
  double eta = 0.1;
  double lambda_reg = 0.1;
  Method method = Method::OPT_OUT;
  bool use_retain = true;
  RegMetric reg_metric = RegMetric::wasserstein;
  ot::SWDConfig swd;         // swd.seed is set per step by the trainer
  std::uint64_t idk_seed = 0;

  void validate() const;
};

/// Frozen reference model with memoized sequence log-probabilities.
/// Not thread-safe: the cache is filled lazily.
class Reference {
 public:
  explicit Reference(TransformerLM model) : model_(std::move(model)) {}

  const TransformerLM& model() const { return model_; }
  double logprob(const std::string& question, const std::string& answer) const;

 private:
  TransformerLM model_;
  mutable std::unordered_map<std::string, double> cache_;
};

// Every loss below returns its value and, when `grad` is non-null, adds
// d(loss)/d(params) into it. Losses are over answer tokens only.

/// Token-mean answer NLL: -sum_i log P(a_i|q_i) / sum_i |a_i|.
double retain_loss(const TransformerLM& model, std::span<const QARecord> batch,
                   ParamSet* grad = nullptr);

/// Exactly -retain_loss.
double ga_loss(const TransformerLM& model, std::span<const QARecord> batch,
               ParamSet* grad = nullptr);

/// mean_i -log sigmoid(-eta (log P_model(a_i|q_i) - log P_ref(a_i|q_i))).
double npo_loss(const TransformerLM& model, const Reference& ref, std::span<const QARecord> batch,
                double eta, ParamSet* grad = nullptr);

/// mean_i -log sigmoid(eta [(s_idk - r_idk) - (s_a - r_a)]); needs idk_answer on every record.
double dpo_idk_loss(const TransformerLM& model, const Reference& ref,
                    std::span<const QARecord> batch, double eta, ParamSet* grad = nullptr);

/// Pool response assigned to `record` under `seed`.
const std::string& idk_response_for(const QARecord& record, std::span<const std::string> pool,
                                    std::uint64_t seed);

/// retain_loss on the batch with every answer replaced by its pool response.
double idk_loss(const TransformerLM& model, std::span<const QARecord> batch,
                std::span<const std::string> pool, std::uint64_t seed, ParamSet* grad = nullptr);

/// Regularizer value (and gradient scaled by `scale` added into grad).
double regularizer(const ParamSet& theta, const ParamSet& theta0, RegMetric metric,
                   const ot::SWDConfig& swd, double scale, ParamSet* grad);

struct CombinedLoss {
  double total = 0.0;
  double forget = 0.0;
  double retain = 0.0;
  double reg = 0.0;  // unscaled distance; total includes lambda * reg
  ParamSet gradient;
};

/// Forget term chosen by cfg.method, plus retain_loss on `retain_batch`
/// when cfg.use_retain, plus lambda * distance(theta, theta0).
CombinedLoss combined_loss(const TransformerLM& model, const Reference& ref, const ParamSet& theta0,
                           std::span<const QARecord> forget_batch,
                           std::span<const QARecord> retain_batch, const ObjectiveConfig& cfg,
                           std::span<const std::string> idk_pool, bool with_gradient = true);

}  // namespace optout
