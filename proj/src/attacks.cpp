#include "optout/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "optout/common.hpp"

namespace optout {

void AttackRecord::validate() const {
  if (trim(attack_type).empty()) {
    throw Error("attack record without attack_type");
  }
  if (trim(prompt).empty() || trim(expected_answer).empty()) {
    throw Error("attack record needs a prompt and an expected answer");
  }
  if (perturbed_answers.size() != QARecord::kNumPerturbations) {
    throw Error("attack record needs exactly 5 perturbed answers");
  }
}

QARecord AttackRecord::as_qa() const {
  QARecord r;
  r.question = prompt;
  r.answer = expected_answer;
  r.paraphrased_answer = paraphrased_answer;
  r.perturbed_answers = perturbed_answers;
  return r;
}

void to_json(nlohmann::json& j, const AttackRecord& r) {
  j = {{"attack_type", r.attack_type},
       {"prompt", r.prompt},
       {"expected_answer", r.expected_answer},
       {"paraphrased_answer", r.paraphrased_answer},
       {"perturbed_answers", r.perturbed_answers}};
}

void from_json(const nlohmann::json& j, AttackRecord& r) {
  j.at("attack_type").get_to(r.attack_type);
  j.at("prompt").get_to(r.prompt);
  j.at("expected_answer").get_to(r.expected_answer);
  j.at("paraphrased_answer").get_to(r.paraphrased_answer);
  j.at("perturbed_answers").get_to(r.perturbed_answers);
  r.validate();
}

void to_json(nlohmann::json& j, const MIAResult& r) {
  j = {{"accuracy_mean", r.accuracy_mean},
       {"accuracy_std", r.accuracy_std},
       {"fold_accuracies", r.fold_accuracies},
       {"n_forget", r.n_forget},
       {"n_test", r.n_test},
       {"folds", r.folds}};
}

std::vector<double> record_losses(const ModelView& model, std::span<const QARecord> records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const auto answer = model.answer_tokens(r.answer);
    const double lp = model.model().seq_logprob(model.prompt_tokens(r.question), answer);
    out.push_back(-lp / static_cast<double>(answer.size()));
  }
  return out;
}

std::vector<QARecord> paraphrased_copies(std::span<const QARecord> records) {
  std::vector<QARecord> out(records.begin(), records.end());
  for (auto& r : out) {
    r.answer = r.paraphrased_answer;
  }
  return out;
}

namespace {

struct Logistic {
  double mean = 0.0;
  double scale = 1.0;
  double w = 0.0;
  double b = 0.0;

  bool predict(double x) const { return w * (x - mean) / scale + b >= 0.0; }
};

// Newton's method on the ridge-penalized log-likelihood of one standardized feature.
Logistic fit_logistic(const std::vector<double>& xs, const std::vector<int>& ys, double l2) {
  Logistic m;
  const double n = static_cast<double>(xs.size());
  m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double var = 0.0;
  for (double x : xs) var += (x - m.mean) * (x - m.mean);
  m.scale = std::sqrt(var / n);
  if (!(m.scale > 0.0)) {
    m.scale = 1.0;
  }
  for (int iter = 0; iter < 50; ++iter) {
    double gw = l2 * m.w, gb = 0.0, hww = l2, hwb = 0.0, hbb = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double z = (xs[i] - m.mean) / m.scale;
      const double p = 1.0 / (1.0 + std::exp(-(m.w * z + m.b)));
      const double r = (p - ys[i]) / n;
      const double s = p * (1.0 - p) / n;
      gw += r * z;
      gb += r;
      hww += s * z * z;
      hwb += s * z;
      hbb += s;
    }
    hbb += 1e-12;
    const double det = hww * hbb - hwb * hwb;
    if (!(det > 0.0)) {
      break;
    }
    const double dw = (hbb * gw - hwb * gb) / det;
    const double db = (hww * gb - hwb * gw) / det;
    m.w -= dw;
    m.b -= db;
    if (std::abs(dw) + std::abs(db) < 1e-10) {
      break;
    }
  }
  return m;
}

}  // namespace

MIAResult mia_from_losses(std::span<const double> forget_losses,
                          std::span<const double> test_losses, const MIAOptions& options) {
  if (forget_losses.empty() || test_losses.empty()) {
    throw Error("mia: both classes need at least one record");
  }
  if (options.seeds.empty()) {
    throw ConfigError("mia: no seeds");
  }
  MIAResult res;
  res.n_forget = forget_losses.size();
  res.n_test = test_losses.size();
  const std::size_t smallest = std::min(forget_losses.size(), test_losses.size());
  std::size_t folds = std::max<std::size_t>(options.folds, 2);
  if (smallest < folds) {
    if (smallest < 2) {
      throw Error("mia: each class needs at least 2 records for cross-validation");
    }
    warn("mia: class size " + std::to_string(smallest) + " below " + std::to_string(folds) +
         " folds; using " + std::to_string(smallest));
    folds = smallest;
  }
  res.folds = folds;

  std::vector<double> xs(forget_losses.begin(), forget_losses.end());
  xs.insert(xs.end(), test_losses.begin(), test_losses.end());
  std::vector<int> ys(forget_losses.size(), 0);
  ys.resize(xs.size(), 1);

  for (std::uint64_t seed : options.seeds) {
    // Stratified assignment: shuffle each class, deal round-robin into folds.
    std::vector<std::size_t> fold_of(xs.size());
    Rng rng(seed);
    for (int cls = 0; cls < 2; ++cls) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (ys[i] == cls) idx.push_back(i);
      }
      rng.shuffle(idx);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        fold_of[idx[k]] = k % folds;
      }
    }
    for (std::size_t f = 0; f < folds; ++f) {
      std::vector<double> tx;
      std::vector<int> ty;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (fold_of[i] != f) {
          tx.push_back(xs[i]);
          ty.push_back(ys[i]);
        }
      }
      const Logistic model = fit_logistic(tx, ty, options.l2);
      std::size_t correct = 0;
      std::size_t total = 0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (fold_of[i] == f) {
          correct += (model.predict(xs[i]) ? 1 : 0) == ys[i] ? 1 : 0;
          ++total;
        }
      }
      res.fold_accuracies.push_back(100.0 * static_cast<double>(correct) /
                                    static_cast<double>(total));
    }
  }
  const double n = static_cast<double>(res.fold_accuracies.size());
  const double mean =
      std::accumulate(res.fold_accuracies.begin(), res.fold_accuracies.end(), 0.0) / n;
  double var = 0.0;
  for (double a : res.fold_accuracies) var += (a - mean) * (a - mean);
  res.accuracy_std = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
  const double prior = 100.0 * static_cast<double>(std::max(res.n_forget, res.n_test)) /
                       static_cast<double>(xs.size());
  res.accuracy_mean = std::max(mean, prior);
  return res;
}

MIAResult mia_attack(const ModelView& model, std::span<const QARecord> forget_records,
                     std::span<const QARecord> paraphrased_test_records,
                     const MIAOptions& options) {
  return mia_from_losses(record_losses(model, forget_records),
                         record_losses(model, paraphrased_test_records), options);
}

std::map<std::string, AttackTypeResult> adversarial_eval(const ModelView& model,
                                                         std::span<const AttackRecord> attacks,
                                                         std::size_t max_new_tokens) {
  std::map<std::string, std::vector<QARecord>> groups;
  std::size_t untagged = 0;
  for (const auto& a : attacks) {
    if (trim(a.attack_type).empty()) {
      ++untagged;
      continue;
    }
    groups[a.attack_type].push_back(a.as_qa());
  }
  if (untagged > 0) {
    warn("adversarial_eval: skipped " + std::to_string(untagged) + " untagged record(s)");
  }
  std::map<std::string, AttackTypeResult> out;
  for (const auto& [type, records] : groups) {
    AttackTypeResult r;
    r.metrics = score_records(model, records, max_new_tokens, true);
    r.fq = forget_quality(r.metrics);
    out.emplace(type, r);
  }
  return out;
}

void to_json(nlohmann::json& j, const std::map<std::string, AttackTypeResult>& r) {
  j = nlohmann::json::object();
  for (const auto& [type, res] : r) {
    j[type] = {{"metrics", res.metrics}, {"fq", res.fq}};
  }
}

}  // namespace optout
