#pragma once

// Shared fixtures for the unit suites: tiny models, hand-built records and
// a central finite-difference oracle that only touches the public
// parameter surface.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "optout/common.hpp"
#include "optout/data_model.hpp"
#include "optout/objectives.hpp"
#include "optout/toy_lm.hpp"
#include "optout/trainer.hpp"

namespace optout::testing {

/// Tokenizer whose vocabulary is exactly the 5 specials plus `words`.
inline Tokenizer tokenizer_with(const std::vector<std::string>& words) {
  std::vector<std::string> all{"<unk>", "<bos>", "<eos>", "q:", "a:"};
  all.insert(all.end(), words.begin(), words.end());
  return Tokenizer::from_words(all);
}

/// 16-word vocabulary (5 specials + 11 words).
inline Tokenizer tokenizer16() {
  return tokenizer_with({"alpha", "beta", "gamma", "delta", "where", "is", "born", "city", "red",
                         "blue", "what"});
}

inline ModelConfig tiny_config(std::uint64_t seed = 3) {
  ModelConfig cfg;
  cfg.context_length = 16;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.d_ff = 16;
  cfg.init_std = 0.3;
  cfg.seed = seed;
  return cfg;
}

/// Zeroes the output head so every next-token distribution is uniform.
inline void make_uniform(TransformerLM& model) {
  for (auto& x : model.mutable_params().at("head").data) {
    x = 0.0;
  }
}

/// Adds i.i.d. Gaussian noise to every parameter.
inline void jitter(TransformerLM& model, double scale, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& entry : model.mutable_params()) {
    for (auto& x : entry.value.data) {
      x += scale * rng.normal();
    }
  }
}

inline QARecord qa(const std::string& q, const std::string& a, const std::string& para = "",
                   std::vector<std::string> pert = {}, std::optional<std::string> idk = {}) {
  QARecord r;
  r.question = q;
  r.answer = a;
  r.paraphrased_answer = para.empty() ? a : para;
  r.perturbed_answers = std::move(pert);
  r.idk_answer = std::move(idk);
  r.source_passage_id = "p0";
  return r;
}

struct Coordinate {
  std::size_t param;
  std::size_t index;
};

/// Random coordinates spread over all parameter matrices.
inline std::vector<Coordinate> probe_coordinates(const ParamSet& params, std::size_t count,
                                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Coordinate> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t p = rng.below(params.size());
    out.push_back({p, rng.below(params[p].value.size())});
  }
  return out;
}

/// Central finite difference of `loss` at one coordinate.
inline double finite_difference(TransformerLM& model, const Coordinate& c,
                                const std::function<double()>& loss, double step = 1e-4) {
  double& x = model.mutable_params()[c.param].value.data[c.index];
  const double saved = x;
  x = saved + step;
  const double up = loss();
  x = saved - step;
  const double down = loss();
  x = saved;
  return (up - down) / (2.0 * step);
}

/// |a - b| / max(|a|, |b|), with a 1e-6 floor on the denominator so
/// coordinates whose true gradient is ~0 are judged on absolute error.
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

// ----------------------------- bundle fixture -----------------------------

inline const std::vector<std::string>& fixture_cities() {
  static const std::vector<std::string> v{"paris", "rome", "oslo", "lima", "kyiv", "cairo"};
  return v;
}

inline const std::vector<std::string>& fixture_colors() {
  static const std::vector<std::string> v{"red", "blue", "green", "pink", "gold", "gray"};
  return v;
}

inline const std::vector<std::string>& fixture_numbers() {
  static const std::vector<std::string> v{"one", "two",   "three", "four",
                                          "five", "six", "seven", "eight"};
  return v;
}

/// Fact about `who`: template k picks the question form, `value` indexes
/// the matching pool. Paraphrase "the city of X" / "the color X"; the five
/// perturbations use the other pool values in the same form.
inline QARecord fixture_fact(const std::string& who, int k, std::size_t value) {
  static const std::vector<std::string> questions{
      "where is {} born", "what color does {} like", "where does {} live",
      "what city does {} like", "what color does {} wear"};
  const bool city = k == 0 || k == 2 || k == 3;
  const auto& pool = city ? fixture_cities() : fixture_colors();
  const std::string lead = city ? "the city of " : "the color ";
  std::string q = questions.at(static_cast<std::size_t>(k));
  q.replace(q.find("{}"), 2, who);
  std::vector<std::string> pert;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (i != value % pool.size()) pert.push_back(lead + pool[i]);
  }
  const std::string v = pool[value % pool.size()];
  return qa(q, v, lead + v, pert, "i do not know");
}

inline WorldRecord fixture_sum(std::size_t a, std::size_t b) {
  const auto& n = fixture_numbers();
  WorldRecord w;
  w.question = "what is " + n[a] + " plus " + n[b];
  const std::size_t sum = a + b + 1;  // zero-based indices
  for (std::size_t i = 0; i < 4; ++i) w.choices.push_back(n[(sum + i) % n.size()]);
  w.correct_index = 0;
  w.paraphrased_answer = "the number " + n[sum];
  for (std::size_t i = 1; i <= 5; ++i) {
    w.perturbed_answers.push_back("the number " + n[(sum + i) % n.size()]);
  }
  return w;
}

inline Tokenizer fixture_tokenizer() {
  std::vector<std::string> words{"alpha", "beta", "gamma", "where", "is",  "born", "what",
                                 "color", "does", "like",  "live",  "city", "wear", "the",
                                 "of",    "number", "plus", "i",    "do",   "not",  "know"};
  for (const auto* pool : {&fixture_cities(), &fixture_colors(), &fixture_numbers()}) {
    words.insert(words.end(), pool->begin(), pool->end());
  }
  return tokenizer_with(words);
}

inline ModelConfig fixture_config(std::uint64_t seed = 3) {
  ModelConfig cfg = tiny_config(seed);
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.context_length = 24;
  cfg.init_std = 0.1;
  return cfg;
}

/// Target alpha (3 facts), neighbors beta and gamma (5 facts each, pooled
/// 8/1/1 split) and 10 arithmetic quiz items.
inline EntityBundle fixture_bundle() {
  std::vector<QARecord> forget{fixture_fact("alpha", 0, 0), fixture_fact("alpha", 1, 0),
                               fixture_fact("alpha", 2, 1)};
  std::vector<NeighborEntity> neighbors;
  std::size_t v = 2;
  for (const std::string who : {"beta", "gamma"}) {
    NeighborEntity n{{who, who}, {}};
    for (int k = 0; k < 5; ++k) n.records.push_back(fixture_fact(who, k, v++));
    neighbors.push_back(n);
  }
  std::vector<WorldRecord> world;
  const std::pair<std::size_t, std::size_t> sums[] = {{0, 0}, {0, 1}, {1, 0}, {0, 2}, {2, 0},
                                                       {1, 1}, {1, 2}, {2, 1}, {2, 2}, {0, 3}};
  for (const auto& [a, b] : sums) world.push_back(fixture_sum(a, b));
  return EntityBundle::assemble({"alpha", "alpha"}, forget, neighbors, world, SplitOptions{});
}

/// Plain NLL fitting with AdamW.
inline void fit(TransformerLM& model, const std::vector<QARecord>& records, int steps,
                double lr = 0.02) {
  AdamW opt(model.params(), lr, 0.0);
  for (int s = 0; s < steps; ++s) {
    ParamSet g = model.params().zeros_like();
    retain_loss(model, records, &g);
    opt.step(model.mutable_params(), g);
  }
}

}  // namespace optout::testing
