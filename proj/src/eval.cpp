#include "optout/eval.hpp"

#include <algorithm>
#include <cmath>

#include "optout/common.hpp"

namespace optout {

namespace {

double normalized_logprob(const ModelView& model, const std::string& question,
                          const std::string& answer) {
  const auto tokens = model.answer_tokens(answer);
  const double lp = model.model().seq_logprob(model.prompt_tokens(question), tokens);
  return lp / static_cast<double>(tokens.size());
}

double log_mean_exp(std::span<const double> xs) {
  const double mx = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) {
    s += std::exp(x - mx);
  }
  return mx + std::log(s / static_cast<double>(xs.size()));
}

}  // namespace

double answer_probability(const ModelView& model, const std::string& question,
                          const std::string& answer) {
  if (trim(answer).empty()) {
    throw Error("answer_probability: empty answer");
  }
  return std::exp(normalized_logprob(model, question, answer));
}

double answer_probability(const ModelView& model, const QARecord& record) {
  return answer_probability(model, record.question, record.answer);
}

namespace {

std::vector<double> choice_scores(const ModelView& model, const WorldRecord& record) {
  if (record.choices.size() < 2) {
    throw Error("multiple-choice record needs at least 2 choices");
  }
  std::vector<double> scores;
  for (const auto& c : record.choices) {
    scores.push_back(normalized_logprob(model, record.question, c));
  }
  return scores;
}

}  // namespace

double mc_probability(const ModelView& model, const WorldRecord& record) {
  const auto scores = choice_scores(model, record);
  const double mx = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) {
    sum += std::exp(s - mx);
  }
  const auto k = static_cast<std::size_t>(record.correct_index);
  return std::exp(scores.at(k) - mx) / sum;
}

std::size_t mc_prediction(const ModelView& model, const WorldRecord& record) {
  const auto scores = choice_scores(model, record);
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) -
                                  scores.begin());
}

double rouge_l_recall(const std::string& prediction, const std::string& reference) {
  const auto ref = rouge_tokens(reference);
  if (ref.empty()) {
    throw Error("rouge_l_recall: empty reference");
  }
  const auto pred = rouge_tokens(prediction);
  std::vector<std::size_t> prev(pred.size() + 1, 0);
  std::vector<std::size_t> cur(pred.size() + 1, 0);
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    for (std::size_t j = 1; j <= pred.size(); ++j) {
      cur[j] = ref[i - 1] == pred[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[pred.size()]) / static_cast<double>(ref.size());
}

double truth_ratio(const ModelView& model, const std::string& question,
                   const std::string& paraphrased, std::span<const std::string> perturbed) {
  if (perturbed.empty()) {
    throw Error("truth_ratio: no perturbed answers");
  }
  std::vector<double> pert;
  for (const auto& p : perturbed) {
    pert.push_back(normalized_logprob(model, question, p));
  }
  const double log_ratio = log_mean_exp(pert) - normalized_logprob(model, question, paraphrased);
  const double ratio = std::exp(log_ratio);
  if (!is_finite(ratio)) {
    throw NumericError("truth ratio is degenerate for question: " + question);
  }
  return ratio;
}

double truth_ratio(const ModelView& model, const QARecord& record) {
  return truth_ratio(model, record.question, record.paraphrased_answer, record.perturbed_answers);
}

double harmonic_mean(std::span<const double> values) {
  if (values.empty()) {
    throw Error("harmonic_mean of nothing");
  }
  double inv = 0.0;
  for (double v : values) {
    if (v < 0.0 || !is_finite(v)) {
      throw NumericError("harmonic_mean needs finite non-negative values");
    }
    if (v == 0.0) {
      return 0.0;
    }
    inv += 1.0 / v;
  }
  return static_cast<double>(values.size()) / inv;
}

double forget_quality(const SetMetrics& f) {
  const double v[] = {std::max(0.0, 1.0 - f.probability), std::max(0.0, 1.0 - f.rouge_l),
                      std::min(1.0, f.truth_ratio)};
  return harmonic_mean(v);
}

double retain_quality(const SetMetrics& r, const SetMetrics& w) {
  const double v[] = {r.probability, r.rouge_l, std::max(0.0, 1.0 - r.truth_ratio),
                      w.probability, w.rouge_l, std::max(0.0, 1.0 - w.truth_ratio)};
  return harmonic_mean(v);
}

// ----------------------------- KS test -----------------------------

namespace {

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

// P(D >= d) under the null by counting monotone lattice paths that stay
// strictly inside the band |i/n - j/m| < d.
double ks_exact_pvalue(std::size_t n, std::size_t m, double d) {
  const double nd = static_cast<double>(n);
  const double md = static_cast<double>(m);
  const double tol = 1e-12;
  auto inside = [&](std::size_t i, std::size_t j) {
    return std::abs(static_cast<double>(i) / nd - static_cast<double>(j) / md) < d - tol;
  };
  std::vector<double> row(m + 1, 0.0);
  for (std::size_t i = 0; i <= n; ++i) {
    for (std::size_t j = 0; j <= m; ++j) {
      if (i == 0 && j == 0) {
        row[j] = 1.0;
      } else {
        const double up = i > 0 ? row[j] : 0.0;
        const double left = j > 0 ? row[j - 1] : 0.0;
        row[j] = up + left;
      }
      if (!inside(i, j)) {
        row[j] = 0.0;
      }
    }
  }
  double total = 1.0;  // C(n + m, n)
  for (std::size_t k = 1; k <= n; ++k) {
    total = total * static_cast<double>(m + k) / static_cast<double>(k);
  }
  return std::clamp(1.0 - row[m] / total, 0.0, 1.0);
}

// Survival function of the Kolmogorov distribution.
double kolmogorov_q(double lambda) {
  if (lambda <= 0.0) {
    return 1.0;
  }
  constexpr double kPi = 3.14159265358979323846;
  if (lambda < 1.18) {
    const double y = -kPi * kPi / (8.0 * lambda * lambda);
    double s = 0.0;
    for (int k = 1; k <= 20; ++k) {
      const double odd = 2.0 * k - 1.0;
      s += std::exp(odd * odd * y);
    }
    return std::clamp(1.0 - std::sqrt(2.0 * kPi) / lambda * s, 0.0, 1.0);
  }
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += (k % 2 == 1 ? term : -term);
    if (term < 1e-16) {
      break;
    }
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

}  // namespace

KSResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) {
    throw Error("ks_two_sample: empty sample");
  }
  KSResult r;
  r.statistic = ks_statistic({a.begin(), a.end()}, {b.begin(), b.end()});
  if (r.statistic == 0.0) {
    r.p_value = 1.0;
    return r;
  }
  if (a.size() < 5 || b.size() < 5) {
    warn("ks_two_sample: sample size below 5, using the exact distribution");
    r.exact = true;
    r.p_value = ks_exact_pvalue(a.size(), b.size(), r.statistic);
    return r;
  }
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double en = std::sqrt(na * nb / (na + nb));
  r.p_value = kolmogorov_q((en + 0.12 + 0.11 / en) * r.statistic);
  return r;
}

double ks_forget_quality(std::span<const double> tr_unlearned, std::span<const double> tr_oracle) {
  return ks_two_sample(tr_unlearned, tr_oracle).p_value;
}

// ----------------------------- evaluation driver -----------------------------

SetMetrics score_records(const ModelView& model, std::span<const QARecord> records,
                         std::size_t max_new_tokens, bool with_truth_ratio,
                         std::vector<double>* truth_ratios) {
  SetMetrics m;
  m.count = records.size();
  if (records.empty()) {
    return m;
  }
  for (const auto& r : records) {
    m.probability += answer_probability(model, r);
    m.rouge_l += rouge_l_recall(model.greedy_answer(r.question, max_new_tokens), r.answer);
    if (with_truth_ratio) {
      const double tr = truth_ratio(model, r);
      m.truth_ratio += tr;
      if (truth_ratios) {
        truth_ratios->push_back(tr);
      }
    }
  }
  const double n = static_cast<double>(records.size());
  m.probability /= n;
  m.rouge_l /= n;
  m.truth_ratio /= n;
  return m;
}

namespace {

void require_perturbations(std::span<const QARecord> records, const std::string& set) {
  std::string missing;
  std::size_t count = 0;
  for (const auto& r : records) {
    if (!r.has_perturbations()) {
      if (count < 5) {
        missing += "\n  " + r.question;
      }
      ++count;
    }
  }
  if (count > 0) {
    throw Error(std::to_string(count) + " " + set +
                " record(s) lack perturbed answers:" + missing);
  }
}

}  // namespace

MetricReport evaluate(const ModelView& model, const EntityBundle& bundle,
                      const EvalOptions& options) {
  const bool valid = options.split == EvalSplit::valid;
  const auto& retain = valid ? bundle.retain_splits.valid : bundle.retain_splits.test;
  const auto& world = valid ? bundle.world_splits.valid : bundle.world_splits.test;
  std::vector<QARecord> world_qa;
  for (const auto& w : world) {
    world_qa.push_back(w.as_qa());
  }
  if (options.truth_ratio) {
    require_perturbations(bundle.forget_set, "forget");
    require_perturbations(retain, "retain");
    require_perturbations(world_qa, "world");
  }

  MetricReport rep;
  rep.forget = score_records(model, bundle.forget_set, options.max_new_tokens, options.truth_ratio,
                             &rep.forget_truth_ratios);
  rep.retain = score_records(model, retain, options.max_new_tokens, options.truth_ratio);
  rep.world = score_records(model, world_qa, options.max_new_tokens, options.truth_ratio);
  // World probability is the multiple-choice form; utility is choice accuracy.
  if (!world.empty()) {
    double prob = 0.0;
    std::size_t correct = 0;
    for (const auto& w : world) {
      prob += mc_probability(model, w);
      correct += mc_prediction(model, w) == static_cast<std::size_t>(w.correct_index) ? 1 : 0;
    }
    rep.world.probability = prob / static_cast<double>(world.size());
    rep.utility = static_cast<double>(correct) / static_cast<double>(world.size());
  }
  rep.fq = forget_quality(rep.forget);
  rep.rq = retain_quality(rep.retain, rep.world);
  if (options.oracle_forget_truth_ratios && options.truth_ratio) {
    rep.fq_ks_pvalue = ks_forget_quality(rep.forget_truth_ratios,
                                         *options.oracle_forget_truth_ratios);
  }
  return rep;
}

void to_json(nlohmann::json& j, const SetMetrics& m) {
  j = {{"probability", m.probability},
       {"rouge_l", m.rouge_l},
       {"truth_ratio", m.truth_ratio},
       {"count", m.count}};
}

void from_json(const nlohmann::json& j, SetMetrics& m) {
  j.at("probability").get_to(m.probability);
  j.at("rouge_l").get_to(m.rouge_l);
  j.at("truth_ratio").get_to(m.truth_ratio);
  j.at("count").get_to(m.count);
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = {{"forget", r.forget},
       {"retain", r.retain},
       {"world", r.world},
       {"fq", r.fq},
       {"rq", r.rq},
       {"utility", r.utility},
       {"fq_ks_pvalue", r.fq_ks_pvalue ? nlohmann::json(*r.fq_ks_pvalue) : nlohmann::json()},
       {"forget_truth_ratios", r.forget_truth_ratios}};
}

void from_json(const nlohmann::json& j, MetricReport& r) {
  j.at("forget").get_to(r.forget);
  j.at("retain").get_to(r.retain);
  j.at("world").get_to(r.world);
  j.at("fq").get_to(r.fq);
  j.at("rq").get_to(r.rq);
  j.at("utility").get_to(r.utility);
  const auto& ks = j.at("fq_ks_pvalue");
  r.fq_ks_pvalue = ks.is_null() ? std::nullopt : std::optional<double>(ks.get<double>());
  j.at("forget_truth_ratios").get_to(r.forget_truth_ratios);
}

}  // namespace optout
