#include "optout/objectives.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "optout/common.hpp"

namespace optout {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

std::string canonical(const std::string& name) {
  std::string out;
  for (char c : name) {
    out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return out;
}

void require_nonempty(std::span<const QARecord> batch, const char* what) {
  if (batch.empty()) {
    throw Error(std::string(what) + ": empty batch");
  }
}

}  // namespace

Method parse_method(const std::string& name) {
  const std::string c = canonical(name);
  if (c == "GA") return Method::GA;
  if (c == "DPO") return Method::DPO;
  if (c == "NPO") return Method::NPO;
  if (c == "IDK") return Method::IDK;
  if (c == "OPT_OUT" || c == "OPTOUT") return Method::OPT_OUT;
  throw ConfigError("unknown method '" + name + "'");
}

std::string to_string(Method method) {
  switch (method) {
    case Method::GA: return "GA";
    case Method::DPO: return "DPO";
    case Method::NPO: return "NPO";
    case Method::IDK: return "IDK";
    case Method::OPT_OUT: return "OPT_OUT";
  }
  return "?";
}

RegMetric parse_reg_metric(const std::string& name) {
  if (name == "none") return RegMetric::none;
  if (name == "wasserstein") return RegMetric::wasserstein;
  if (name == "manhattan") return RegMetric::manhattan;
  if (name == "euclidean") return RegMetric::euclidean;
  if (name == "chebyshev") return RegMetric::chebyshev;
  if (name == "cosine") return RegMetric::cosine;
  throw ConfigError("unknown regularizer metric '" + name + "'");
}

std::string to_string(RegMetric metric) {
  switch (metric) {
    case RegMetric::none: return "none";
    case RegMetric::wasserstein: return "wasserstein";
    case RegMetric::manhattan: return "manhattan";
    case RegMetric::euclidean: return "euclidean";
    case RegMetric::chebyshev: return "chebyshev";
    case RegMetric::cosine: return "cosine";
  }
  return "?";
}

void ObjectiveConfig::validate() const {
  if (!(eta > 0.0)) {
    throw ConfigError("eta must be positive");
  }
  if (!(lambda_reg >= 0.0)) {
    throw ConfigError("lambda_reg must be non-negative");
  }
  if (method == Method::OPT_OUT && reg_metric == RegMetric::none) {
    throw ConfigError("OPT_OUT needs a regularizer metric");
  }
  swd.validate();
}

double Reference::logprob(const std::string& question, const std::string& answer) const {
  std::string key = question;
  key += '\x1f';
  key += answer;
  if (auto it = cache_.find(key); it != cache_.end()) {
    return it->second;
  }
  const double lp = ModelView(model_).seq_logprob(question, answer);
  cache_.emplace(std::move(key), lp);
  return lp;
}

namespace {

// Token-mean answer NLL; `sign` flips both the value and the gradient.
double signed_nll(const TransformerLM& model, std::span<const QARecord> batch, double sign,
                  ParamSet* grad) {
  const ModelView view(model);
  std::vector<std::vector<int>> prompts;
  std::vector<std::vector<int>> answers;
  std::size_t tokens = 0;
  for (const auto& r : batch) {
    prompts.push_back(view.prompt_tokens(r.question));
    answers.push_back(view.answer_tokens(r.answer));
    tokens += answers.back().size();
  }
  const double inv = 1.0 / static_cast<double>(tokens);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total += grad ? model.accumulate_seq_logprob_grad(prompts[i], answers[i], -sign * inv, *grad)
                  : model.seq_logprob(prompts[i], answers[i]);
  }
  const double nll = -total * inv;
  if (!is_finite(nll)) {
    throw NumericError("answer NLL is not finite");
  }
  return sign * nll;
}

}  // namespace

double retain_loss(const TransformerLM& model, std::span<const QARecord> batch, ParamSet* grad) {
  require_nonempty(batch, "retain_loss");
  return signed_nll(model, batch, 1.0, grad);
}

double ga_loss(const TransformerLM& model, std::span<const QARecord> batch, ParamSet* grad) {
  require_nonempty(batch, "ga_loss");
  return signed_nll(model, batch, -1.0, grad);
}

double npo_loss(const TransformerLM& model, const Reference& ref, std::span<const QARecord> batch,
                double eta, ParamSet* grad) {
  require_nonempty(batch, "npo_loss");
  if (!(eta > 0.0)) {
    throw ConfigError("eta must be positive");
  }
  model.params().require_compatible(ref.model().params(), "npo reference");
  const ModelView view(model);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& r : batch) {
    const double ref_lp = ref.logprob(r.question, r.answer);
    const auto prompt = view.prompt_tokens(r.question);
    const auto answer = view.answer_tokens(r.answer);
    double s = 0.0;
    if (grad) {
      s = model.accumulate_seq_logprob_grad(
          prompt, answer,
          [&](double lp) { return eta * sigmoid(eta * (lp - ref_lp)) * inv_n; }, *grad);
    } else {
      s = model.seq_logprob(prompt, answer);
    }
    const double z = s - ref_lp;
    if (!is_finite(z)) {
      throw NumericError("npo log-ratio is not finite");
    }
    total += softplus(eta * z);
  }
  return total * inv_n;
}

double dpo_idk_loss(const TransformerLM& model, const Reference& ref,
                    std::span<const QARecord> batch, double eta, ParamSet* grad) {
  require_nonempty(batch, "dpo_idk_loss");
  if (!(eta > 0.0)) {
    throw ConfigError("eta must be positive");
  }
  model.params().require_compatible(ref.model().params(), "dpo reference");
  const ModelView view(model);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& r : batch) {
    if (!r.idk_answer) {
      throw Error("dpo_idk_loss: record without idk_answer: " + r.question);
    }
    const auto prompt = view.prompt_tokens(r.question);
    const auto ans = view.answer_tokens(r.answer);
    const auto idk = view.answer_tokens(*r.idk_answer);
    const double s_a = model.seq_logprob(prompt, ans);
    const double s_idk = model.seq_logprob(prompt, idk);
    const double margin = eta * ((s_idk - ref.logprob(r.question, *r.idk_answer)) -
                                 (s_a - ref.logprob(r.question, r.answer)));
    if (!is_finite(margin)) {
      throw NumericError("dpo margin is not finite");
    }
    total += softplus(-margin);
    if (grad) {
      const double w = eta * sigmoid(-margin) * inv_n;
      model.accumulate_seq_logprob_grad(prompt, idk, -w, *grad);
      model.accumulate_seq_logprob_grad(prompt, ans, w, *grad);
    }
  }
  return total * inv_n;
}

const std::string& idk_response_for(const QARecord& record, std::span<const std::string> pool,
                                    std::uint64_t seed) {
  if (pool.empty()) {
    throw Error("idk pool is empty");
  }
  const std::uint64_t h = derive_seed(fnv1a64(record_key(record)), seed);
  return pool[h % pool.size()];
}

double idk_loss(const TransformerLM& model, std::span<const QARecord> batch,
                std::span<const std::string> pool, std::uint64_t seed, ParamSet* grad) {
  require_nonempty(batch, "idk_loss");
  std::vector<QARecord> substituted(batch.begin(), batch.end());
  for (auto& r : substituted) {
    r.answer = idk_response_for(r, pool, seed);
  }
  return retain_loss(model, substituted, grad);
}

double regularizer(const ParamSet& theta, const ParamSet& theta0, RegMetric metric,
                   const ot::SWDConfig& swd, double scale, ParamSet* grad) {
  if (metric == RegMetric::none) {
    return 0.0;
  }
  ot::RegularizerValue r;
  if (metric == RegMetric::wasserstein) {
    r = ot::param_swd(theta, theta0, swd, grad != nullptr);
  } else {
    const auto m = ot::parse_distance_metric(to_string(metric));
    if (grad) {
      r = ot::baseline_distance_with_gradient(theta, theta0, m);
    } else {
      r.value = ot::baseline_distance(theta, theta0, m);
    }
  }
  if (grad) {
    grad->add_scaled(r.gradient, scale);
  }
  return r.value;
}

CombinedLoss combined_loss(const TransformerLM& model, const Reference& ref, const ParamSet& theta0,
                           std::span<const QARecord> forget_batch,
                           std::span<const QARecord> retain_batch, const ObjectiveConfig& cfg,
                           std::span<const std::string> idk_pool, bool with_gradient) {
  cfg.validate();
  CombinedLoss out;
  ParamSet* g = nullptr;
  if (with_gradient) {
    out.gradient = model.params().zeros_like();
    g = &out.gradient;
  }
  switch (cfg.method) {
    case Method::GA:
      out.forget = ga_loss(model, forget_batch, g);
      break;
    case Method::NPO:
    case Method::OPT_OUT:
      out.forget = npo_loss(model, ref, forget_batch, cfg.eta, g);
      break;
    case Method::DPO:
      out.forget = dpo_idk_loss(model, ref, forget_batch, cfg.eta, g);
      break;
    case Method::IDK:
      out.forget = idk_loss(model, forget_batch, idk_pool, cfg.idk_seed, g);
      break;
  }
  out.total = out.forget;
  if (cfg.use_retain) {
    out.retain = retain_loss(model, retain_batch, g);
    out.total += out.retain;
  }
  if (cfg.lambda_reg > 0.0 && cfg.reg_metric != RegMetric::none) {
    out.reg = regularizer(model.params(), theta0, cfg.reg_metric, cfg.swd, cfg.lambda_reg, g);
    out.total += cfg.lambda_reg * out.reg;
  }
  return out;
}

}  // namespace optout
