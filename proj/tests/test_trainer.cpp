#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "optout/checkpoint.hpp"
#include "optout/trainer.hpp"
#include "test_support.hpp"

namespace optout {
namespace {

bool bitwise_equal(const ParamSet& a, const ParamSet& b) {
  const auto fa = a.flatten();
  const auto fb = b.flatten();
  return fa.size() == fb.size() && std::memcmp(fa.data(), fb.data(), fa.size() * sizeof(double)) == 0;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Shared pretrained fixture model; pretraining is the slow part of this suite.
const TransformerLM& pretrained_fixture() {
  static const TransformerLM model = [] {
    TransformerLM m(testing::fixture_config(3), testing::fixture_tokenizer());
    PretrainConfig cfg;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.01;
    cfg.max_epochs = 150;
    pretrain(m, testing::fixture_bundle(), cfg);
    return m;
  }();
  return model;
}

TrainConfig quick_config(Method method) {
  TrainConfig cfg;
  cfg.method = method;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.learning_rate = 5e-3;
  cfg.seed = 9;
  cfg.swd_projections = 16;
  cfg.eval_max_new_tokens = 8;
  return cfg;
}

// ----------------------------- early stopping -----------------------------

TEST(EarlyStop, RuleExample) {
  const std::vector<double> s{0.5, 0.6, 0.55};
  EXPECT_FALSE(early_stop_decision(std::span(s).first(1)).stop);
  EXPECT_FALSE(early_stop_decision(std::span(s).first(2)).stop);
  const auto d = early_stop_decision(s);
  EXPECT_TRUE(d.stop);
  EXPECT_EQ(d.best + 1, 2u);  // epoch numbers are 1-based
}

TEST(EarlyStop, PropertyOnRandomSequences) {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> s(1 + rng.below(8));
    for (auto& v : s) v = static_cast<double>(rng.below(5)) / 4.0;  // ties are common
    const auto d = early_stop_decision(s);
    std::size_t oracle_best = 0;
    for (std::size_t i = 1; i < s.size(); ++i) {
      if (s[i] > s[oracle_best]) oracle_best = i;
    }
    EXPECT_EQ(d.best, oracle_best);
    EXPECT_EQ(d.stop, s.size() >= 2 && s[s.size() - 1] < s[s.size() - 2]);
  }
}

// ----------------------------- optimizer -----------------------------

TEST(AdamW, MatchesScalarOracle) {
  ParamSet p;
  p.add("w", 1, 3);
  p.at("w").data = {0.5, -1.0, 2.0};
  const double lr = 0.1, wd = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  AdamW opt(p, lr, wd);
  std::vector<double> ref = p.at("w").data, m(3, 0.0), v(3, 0.0);
  Rng rng(2);
  for (int t = 1; t <= 20; ++t) {
    ParamSet g = p.zeros_like();
    for (auto& x : g.at("w").data) x = rng.normal();
    for (std::size_t i = 0; i < 3; ++i) {
      const double gi = g.at("w").data[i];
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      ref[i] = ref[i] - lr * mh / (std::sqrt(vh) + eps) - lr * wd * ref[i];
    }
    opt.step(p, g);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p.at("w").data[i], ref[i], 1e-12);
  }
  EXPECT_EQ(opt.steps(), 20u);
}

TEST(AdamW, FirstStepMovesEachCoordinateByLearningRate) {
  ParamSet p;
  p.add("w", 2, 2);
  AdamW opt(p, 0.01, 0.0);
  ParamSet g = p.zeros_like();
  g.at("w").data = {3.0, -0.2, 1e-3, -40.0};
  opt.step(p, g);
  const std::vector<double> expect{-0.01, 0.01, -0.01, 0.01};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p.at("w").data[i], expect[i], 1e-7);
}

TEST(AdamW, RejectsMismatchedGradient) {
  ParamSet p;
  p.add("w", 2, 2);
  AdamW opt(p, 0.01, 0.0);
  ParamSet g;
  g.add("w", 1, 2);
  EXPECT_THROW(opt.step(p, g), ShapeError);
}

// ----------------------------- configuration -----------------------------

TEST(TrainConfigJson, RoundTripAndUnknownKeys) {
  TrainConfig c = quick_config(Method::DPO);
  c.reg_metric = RegMetric::cosine;
  c.retain_source = RetainSource::world_only;
  c.swd_aggregation = ot::Aggregation::sum;
  c.early_stopping = false;
  const nlohmann::json j = c;
  EXPECT_EQ(nlohmann::json(j.get<TrainConfig>()), j);

  nlohmann::json bad = j;
  bad["learnin_rate"] = 0.1;
  EXPECT_THROW(bad.get<TrainConfig>(), ConfigError);
  bad = j;
  bad["method"] = "SGD";
  EXPECT_THROW(bad.get<TrainConfig>(), ConfigError);
  bad = j;
  bad["retain_source"] = "everything";
  EXPECT_THROW(bad.get<TrainConfig>(), ConfigError);
  EXPECT_EQ(nlohmann::json(nlohmann::json::object().get<TrainConfig>()), nlohmann::json(TrainConfig{}));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lambda_reg = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  PretrainConfig p;
  p.patience = 0;
  EXPECT_THROW(p.validate(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"epochs", 3}}).get<PretrainConfig>(), ConfigError);
}

TEST(ConfigHash, StableAndSensitive) {
  const nlohmann::json a = quick_config(Method::GA);
  EXPECT_EQ(config_hash(a), config_hash(nlohmann::json::parse(a.dump())));
  nlohmann::json b = a;
  b["seed"] = 10;
  EXPECT_NE(config_hash(a), config_hash(b));
}

// ----------------------------- pretraining -----------------------------

TEST(Pretrain, ZeroEpochsLeavesModelUnchanged) {
  TransformerLM m(testing::fixture_config(3), testing::fixture_tokenizer());
  const ParamSet before = m.params();
  PretrainConfig cfg;
  cfg.max_epochs = 0;
  const RunRecord rec = pretrain(m, testing::fixture_bundle(), cfg);
  EXPECT_TRUE(bitwise_equal(m.params(), before));
  EXPECT_TRUE(rec.step_losses.empty());
  EXPECT_EQ(rec.kind, "pretrain");
}

TEST(Pretrain, FixedSeedGivesIdenticalCheckpointHash) {
  auto run = [] {
    TransformerLM m(testing::fixture_config(3), testing::fixture_tokenizer());
    PretrainConfig cfg;
    cfg.max_epochs = 4;
    cfg.batch_size = 8;
    cfg.seed = 21;
    const RunRecord rec = pretrain(m, testing::fixture_bundle(), cfg);
    return std::make_pair(params_hash(m.params()), rec.step_losses);
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_TRUE(bitwise_equal(a.second, b.second));
}

TEST(Pretrain, MemorizesTheFixtureCorpus) {
  const TransformerLM& m = pretrained_fixture();
  const EntityBundle b = testing::fixture_bundle();
  for (const auto& r : b.forget_set) {
    EXPECT_EQ(rouge_l_recall(ModelView(m).greedy_answer(r.question, 8), r.answer), 1.0) << r.question;
  }
  for (const auto& r : b.retain_splits.train) {
    EXPECT_EQ(rouge_l_recall(ModelView(m).greedy_answer(r.question, 8), r.answer), 1.0) << r.question;
  }
}

TEST(Pretrain, OracleExcludesForgetSet) {
  TransformerLM m(testing::fixture_config(3), testing::fixture_tokenizer());
  PretrainConfig cfg;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.01;
  cfg.max_epochs = 60;
  cfg.include_forget = false;
  pretrain(m, testing::fixture_bundle(), cfg);
  const EntityBundle b = testing::fixture_bundle();
  const TransformerLM& full = pretrained_fixture();
  for (const auto& r : b.forget_set) {
    EXPECT_LT(answer_probability(ModelView(m), r), answer_probability(ModelView(full), r));
  }
}

// ----------------------------- unlearning -----------------------------

TEST(Unlearn, LambdaZeroOptOutEqualsNpoWithRetain) {
  TrainConfig opt_out = quick_config(Method::OPT_OUT);
  opt_out.lambda_reg = 0.0;
  opt_out.early_stopping = false;
  TrainConfig npo = opt_out;
  npo.method = Method::NPO;
  npo.use_retain = true;

  TransformerLM a = pretrained_fixture();
  TransformerLM b = pretrained_fixture();
  const EntityBundle bundle = testing::fixture_bundle();
  const RunRecord ra = unlearn(a, bundle, opt_out);
  const RunRecord rb = unlearn(b, bundle, npo);
  ASSERT_FALSE(ra.step_losses.empty());
  EXPECT_TRUE(bitwise_equal(ra.step_losses, rb.step_losses));
  EXPECT_TRUE(bitwise_equal(a.params(), b.params()));
}

TEST(Unlearn, DeterministicUnderFixedSeed) {
  const EntityBundle bundle = testing::fixture_bundle();
  const TrainConfig cfg = quick_config(Method::OPT_OUT);
  TransformerLM a = pretrained_fixture();
  TransformerLM b = pretrained_fixture();
  const RunRecord ra = unlearn(a, bundle, cfg);
  const RunRecord rb = unlearn(b, bundle, cfg);
  EXPECT_TRUE(bitwise_equal(ra.step_losses, rb.step_losses));
  EXPECT_EQ(params_hash(a.params()), params_hash(b.params()));
  EXPECT_EQ(ra.best_epoch, rb.best_epoch);
}

TEST(Unlearn, ReturnedEpochHasTheBestValidationScore) {
  const EntityBundle bundle = testing::fixture_bundle();
  for (Method method : {Method::GA, Method::NPO, Method::OPT_OUT}) {
    TrainConfig cfg = quick_config(method);
    cfg.epochs = 4;
    TransformerLM m = pretrained_fixture();
    const RunRecord rec = unlearn(m, bundle, cfg);
    ASSERT_GE(rec.best_epoch, 1u);
    double best = -1.0;
    for (const auto& e : rec.epochs) best = std::max(best, *e.val_score);
    EXPECT_EQ(*rec.epochs[rec.best_epoch - 1].val_score, best);

    // the model left behind is the one that scored best
    EvalOptions opts;
    opts.split = EvalSplit::valid;
    opts.max_new_tokens = cfg.eval_max_new_tokens;
    const MetricReport r = evaluate(ModelView(m), bundle, opts);
    const double fq_rq[] = {r.fq, r.rq};
    EXPECT_DOUBLE_EQ(harmonic_mean(fq_rq), best);
    if (rec.stopped_early) {
      const auto& ep = rec.epochs;
      EXPECT_LT(*ep.back().val_score, *ep[ep.size() - 2].val_score);
    }
  }
}

TEST(Unlearn, EarlyStoppingOffKeepsTheFinalEpoch) {
  const EntityBundle bundle = testing::fixture_bundle();
  TrainConfig cfg = quick_config(Method::GA);
  cfg.use_retain = false;
  cfg.early_stopping = false;
  TransformerLM m = pretrained_fixture();
  const RunRecord rec = unlearn(m, bundle, cfg);
  EXPECT_EQ(rec.epochs.size(), cfg.epochs);
  EXPECT_EQ(rec.best_epoch, cfg.epochs);
  EXPECT_FALSE(rec.stopped_early);
}

TEST(Unlearn, GradientAscentWithoutRetainCollapsesRetainProbability) {
  const EntityBundle bundle = testing::fixture_bundle();
  TrainConfig cfg = quick_config(Method::GA);
  cfg.use_retain = false;
  cfg.early_stopping = false;
  cfg.epochs = 10;
  cfg.learning_rate = 1e-2;
  TransformerLM m = pretrained_fixture();
  const double before =
      evaluate(ModelView(pretrained_fixture()), bundle, {EvalSplit::valid, 8, false}).retain.probability;
  unlearn(m, bundle, cfg);
  const double after = evaluate(ModelView(m), bundle, {EvalSplit::valid, 8, false}).retain.probability;
  EXPECT_LT(after, 0.5 * before);
}

TEST(Unlearn, NonFiniteLossRollsBackAndRecordsError) {
  TransformerLM m = pretrained_fixture();
  m.mutable_params()[0].value.data[0] = std::numeric_limits<double>::quiet_NaN();
  const ParamSet before = m.params();
  TrainConfig cfg = quick_config(Method::NPO);
  const RunRecord rec = unlearn(m, testing::fixture_bundle(), cfg);
  EXPECT_FALSE(rec.error.empty());
  EXPECT_TRUE(rec.step_losses.empty());
  EXPECT_TRUE(bitwise_equal(m.params(), before));
}

TEST(Unlearn, Errors) {
  TransformerLM m = pretrained_fixture();
  EntityBundle b = testing::fixture_bundle();
  EntityBundle no_forget = b;
  no_forget.forget_set.clear();
  EXPECT_THROW(unlearn(m, no_forget, quick_config(Method::GA)), Error);
  EntityBundle no_retain = b;
  no_retain.retain_splits.train.clear();
  EXPECT_THROW(unlearn(m, no_retain, quick_config(Method::OPT_OUT)), Error);
  TrainConfig world_only = quick_config(Method::OPT_OUT);
  world_only.retain_source = RetainSource::world_only;
  world_only.epochs = 1;
  EXPECT_NO_THROW(unlearn(m, no_retain, world_only));
}

// ----------------------------- guardrail -----------------------------

TEST(Guardrail, PromptOnlyWrapper) {
  const TransformerLM& m = pretrained_fixture();
  const std::string before = params_hash(m.params());
  const ModelView wrapped = guardrail_wrap(m, "alpha");
  EXPECT_EQ(params_hash(wrapped.model().params()), before);
  EXPECT_NE(wrapped.system_prefix().find("alpha"), std::string::npos);
  EXPECT_NE(guardrail_prompt("zeta quinn").find("zeta quinn"), std::string::npos);

  const QARecord r = testing::fixture_fact("beta", 1, 4);
  EXPECT_NE(wrapped.prompt_tokens(r.question), ModelView(m).prompt_tokens(r.question));
  const ModelView unwrapped(wrapped.model());
  EXPECT_EQ(unwrapped.seq_logprob(r.question, r.answer), ModelView(m).seq_logprob(r.question, r.answer));
  EXPECT_EQ(unwrapped.greedy_answer(r.question, 8), ModelView(m).greedy_answer(r.question, 8));
}

}  // namespace
}  // namespace optout
