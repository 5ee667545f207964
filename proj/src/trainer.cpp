#include "optout/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include "optout/checkpoint.hpp"
#include "optout/common.hpp"

namespace optout {

// ----------------------------- optimizer -----------------------------

AdamW::AdamW(const ParamSet& layout, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : lr_(lr),
      wd_(weight_decay),
      b1_(beta1),
      b2_(beta2),
      eps_(eps),
      m_(layout.zeros_like()),
      v_(layout.zeros_like()) {}

void AdamW::step(ParamSet& params, const ParamSet& grad) {
  params.require_compatible(grad, "optimizer gradient");
  params.require_compatible(m_, "optimizer state");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].value.data;
    const auto& g = grad[k].value.data;
    auto& m = m_[k].value.data;
    auto& v = v_[k].value.data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      p[i] -= lr_ * (mh / (std::sqrt(vh) + eps_) + wd_ * p[i]);
    }
  }
}

// ----------------------------- configuration -----------------------------

RetainSource parse_retain_source(const std::string& name) {
  if (name == "neighbors_and_world") return RetainSource::neighbors_and_world;
  if (name == "neighbors_only") return RetainSource::neighbors_only;
  if (name == "world_only") return RetainSource::world_only;
  throw ConfigError("unknown retain source '" + name + "'");
}

std::string to_string(RetainSource source) {
  switch (source) {
    case RetainSource::neighbors_and_world: return "neighbors_and_world";
    case RetainSource::neighbors_only: return "neighbors_only";
    case RetainSource::world_only: return "world_only";
  }
  return "?";
}

namespace {

ot::Aggregation parse_aggregation(const std::string& name) {
  if (name == "mean") return ot::Aggregation::mean;
  if (name == "sum") return ot::Aggregation::sum;
  throw ConfigError("unknown aggregation '" + name + "'");
}

void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known,
                         const std::string& what) {
  if (!j.is_object()) {
    throw ConfigError(what + " must be a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw ConfigError("unknown " + what + " key '" + key + "'");
    }
  }
}

template <typename T>
T field(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) {
    return fallback;
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  objective().validate();
}

ObjectiveConfig TrainConfig::objective() const {
  ObjectiveConfig o;
  o.eta = eta;
  o.lambda_reg = lambda_reg;
  o.method = method;
  o.use_retain = use_retain;
  o.reg_metric = reg_metric;
  o.swd.p = swd_p;
  o.swd.num_projections = swd_projections;
  o.swd.aggregation = swd_aggregation;
  o.idk_seed = seed;
  return o;
}

void PretrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("pretrain batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("pretrain learning_rate must be positive");
  if (eval_every == 0) throw ConfigError("pretrain eval_every must be positive");
  if (patience == 0) throw ConfigError("pretrain patience must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"epochs", c.epochs},
       {"eta", c.eta},
       {"lambda_reg", c.lambda_reg},
       {"seed", c.seed},
       {"method", to_string(c.method)},
       {"use_retain", c.use_retain},
       {"reg_metric", to_string(c.reg_metric)},
       {"retain_source", to_string(c.retain_source)},
       {"swd_p", c.swd_p},
       {"swd_projections", c.swd_projections},
       {"swd_aggregation", c.swd_aggregation == ot::Aggregation::sum ? "sum" : "mean"},
       {"early_stopping", c.early_stopping},
       {"eval_max_new_tokens", c.eval_max_new_tokens}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const nlohmann::json defaults = TrainConfig{};
  std::set<std::string> known;
  for (const auto& [key, value] : defaults.items()) {
    known.insert(key);
  }
  reject_unknown_keys(j, known, "train");
  TrainConfig d;
  c.batch_size = field(j, "batch_size", d.batch_size);
  c.learning_rate = field(j, "learning_rate", d.learning_rate);
  c.weight_decay = field(j, "weight_decay", d.weight_decay);
  c.epochs = field(j, "epochs", d.epochs);
  c.eta = field(j, "eta", d.eta);
  c.lambda_reg = field(j, "lambda_reg", d.lambda_reg);
  c.seed = field(j, "seed", d.seed);
  c.method = parse_method(field<std::string>(j, "method", to_string(d.method)));
  c.use_retain = field(j, "use_retain", d.use_retain);
  c.reg_metric = parse_reg_metric(field<std::string>(j, "reg_metric", to_string(d.reg_metric)));
  c.retain_source =
      parse_retain_source(field<std::string>(j, "retain_source", to_string(d.retain_source)));
  c.swd_p = field(j, "swd_p", d.swd_p);
  c.swd_projections = field(j, "swd_projections", d.swd_projections);
  c.swd_aggregation = parse_aggregation(field<std::string>(j, "swd_aggregation", "mean"));
  c.early_stopping = field(j, "early_stopping", d.early_stopping);
  c.eval_max_new_tokens = field(j, "eval_max_new_tokens", d.eval_max_new_tokens);
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"batch_size", c.batch_size},         {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},     {"max_epochs", c.max_epochs},
       {"eval_every", c.eval_every},         {"patience", c.patience},
       {"min_improvement", c.min_improvement}, {"seed", c.seed},
       {"include_forget", c.include_forget},
       {"include_paraphrases", c.include_paraphrases}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  const nlohmann::json defaults = PretrainConfig{};
  std::set<std::string> known;
  for (const auto& [key, value] : defaults.items()) {
    known.insert(key);
  }
  reject_unknown_keys(j, known, "pretrain");
  PretrainConfig d;
  c.batch_size = field(j, "batch_size", d.batch_size);
  c.learning_rate = field(j, "learning_rate", d.learning_rate);
  c.weight_decay = field(j, "weight_decay", d.weight_decay);
  c.max_epochs = field(j, "max_epochs", d.max_epochs);
  c.eval_every = field(j, "eval_every", d.eval_every);
  c.patience = field(j, "patience", d.patience);
  c.min_improvement = field(j, "min_improvement", d.min_improvement);
  c.seed = field(j, "seed", d.seed);
  c.include_forget = field(j, "include_forget", d.include_forget);
  c.include_paraphrases = field(j, "include_paraphrases", d.include_paraphrases);
}

void to_json(nlohmann::json& j, const EpochRecord& e) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  j = {{"epoch", e.epoch},
       {"loss_total", e.loss_total},
       {"loss_forget", e.loss_forget},
       {"loss_retain", e.loss_retain},
       {"loss_reg", e.loss_reg},
       {"val_fq", opt(e.val_fq)},
       {"val_rq", opt(e.val_rq)},
       {"val_score", opt(e.val_score)},
       {"val_probability", opt(e.val_probability)}};
}

void to_json(nlohmann::json& j, const RunRecord& r) {
  j = {{"kind", r.kind},
       {"method", r.method},
       {"config_hash", r.config_hash},
       {"epochs", r.epochs},
       {"step_losses", r.step_losses},
       {"best_epoch", r.best_epoch},
       {"stopped_early", r.stopped_early},
       {"checkpoint_paths", r.checkpoint_paths},
       {"wall_clock_seconds", r.wall_clock_seconds},
       {"error", r.error}};
}

std::string config_hash(const nlohmann::json& config) { return to_hex(fnv1a64(config.dump())); }

EarlyStopDecision early_stop_decision(std::span<const double> scores) {
  EarlyStopDecision d;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > scores[d.best]) {
      d.best = i;
    }
  }
  d.stop = scores.size() >= 2 && scores.back() < scores[scores.size() - 2];
  return d;
}

// ----------------------------- pretraining -----------------------------

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<QARecord> world_as_qa(const std::vector<WorldRecord>& world) {
  std::vector<QARecord> out;
  out.reserve(world.size());
  for (const auto& w : world) {
    out.push_back(w.as_qa());
  }
  return out;
}

double mean_answer_probability(const TransformerLM& model, std::span<const QARecord> records) {
  if (records.empty()) {
    return 0.0;
  }
  const ModelView view(model);
  double s = 0.0;
  for (const auto& r : records) {
    s += answer_probability(view, r);
  }
  return s / static_cast<double>(records.size());
}

// k indices from [0, n): without replacement when k <= n.
std::vector<std::size_t> draw_indices(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> out;
  if (k <= n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(idx[i], idx[i + rng.below(n - i)]);
      out.push_back(idx[i]);
    }
  } else {
    for (std::size_t i = 0; i < k; ++i) {
      out.push_back(rng.below(n));
    }
  }
  return out;
}

}  // namespace

RunRecord pretrain(TransformerLM& model, const EntityBundle& bundle, const PretrainConfig& cfg,
                   const std::optional<std::filesystem::path>& checkpoint_file) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.kind = "pretrain";
  rec.config_hash = config_hash(nlohmann::json(cfg));

  std::vector<QARecord> train;
  std::vector<QARecord> valid;
  if (cfg.include_forget) {
    train = bundle.forget_set;
    valid = bundle.forget_set;
  }
  for (const auto& r : bundle.all_retain_records()) {
    train.push_back(r);
  }
  for (const auto& r : world_as_qa(bundle.all_world_records())) {
    train.push_back(r);
  }
  valid.insert(valid.end(), bundle.retain_splits.valid.begin(), bundle.retain_splits.valid.end());
  for (const auto& r : world_as_qa(bundle.world_splits.valid)) {
    valid.push_back(r);
  }
  if (cfg.include_paraphrases) {
    const std::size_t n = train.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (!train[i].paraphrased_answer.empty() && train[i].paraphrased_answer != train[i].answer) {
        QARecord copy = train[i];
        copy.answer = copy.paraphrased_answer;
        train.push_back(std::move(copy));
      }
    }
  }
  if (train.empty()) {
    throw Error("pretrain: no training records");
  }

  AdamW opt(model.params(), cfg.learning_rate, cfg.weight_decay);
  double best_prob = -1.0;
  std::size_t stalled = 0;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, epoch));
    rng.shuffle(order);
    EpochRecord er;
    er.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<QARecord> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) {
        batch.push_back(train[order[i]]);
      }
      ParamSet grad = model.params().zeros_like();
      double loss = 0.0;
      try {
        loss = retain_loss(model, batch, &grad);
      } catch (const NumericError& e) {
        throw NumericError("pretraining diverged at epoch " + std::to_string(epoch) + ": " +
                           e.what());
      }
      opt.step(model.mutable_params(), grad);
      er.loss_retain += loss;
      rec.step_losses.push_back(loss);
      ++batches;
    }
    er.loss_retain /= static_cast<double>(batches);
    er.loss_total = er.loss_retain;
    const bool last = epoch == cfg.max_epochs;
    if (epoch % cfg.eval_every == 0 || last) {
      const double prob = mean_answer_probability(model, valid);
      er.val_probability = prob;
      if (prob >= best_prob * (1.0 + cfg.min_improvement)) {
        best_prob = prob;
        stalled = 0;
      } else if (++stalled >= cfg.patience) {
        rec.epochs.push_back(er);
        rec.stopped_early = true;
        break;
      }
    }
    rec.epochs.push_back(er);
  }
  rec.best_epoch = rec.epochs.size();
  if (checkpoint_file) {
    save_checkpoint(Checkpoint::of(model, "pretrained", {{"run", nlohmann::json(cfg)}}),
                    *checkpoint_file);
    rec.checkpoint_paths.push_back(checkpoint_file->string());
  }
  rec.wall_clock_seconds = seconds_since(start);
  return rec;
}

// ----------------------------- unlearning -----------------------------

RunRecord unlearn(TransformerLM& model, const EntityBundle& bundle, const TrainConfig& cfg,
                  std::span<const std::string> idk_pool,
                  const std::optional<std::filesystem::path>& checkpoint_dir) {
  cfg.validate();
  if (bundle.forget_set.empty()) {
    throw Error("unlearn: forget set empty");
  }
  const auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.kind = "unlearn";
  rec.method = to_string(cfg.method);
  rec.config_hash = config_hash(nlohmann::json(cfg));

  const ParamSet theta0 = model.params();
  const Reference ref(model);
  ObjectiveConfig obj = cfg.objective();
  const auto& retain_pool = bundle.retain_splits.train;
  const std::vector<QARecord> world_pool = world_as_qa(bundle.world_splits.train);
  const bool want_neighbors = cfg.retain_source != RetainSource::world_only;
  const bool want_world = cfg.retain_source != RetainSource::neighbors_only;
  if (cfg.use_retain && ((want_neighbors && retain_pool.empty()) ||
                         (want_world && world_pool.empty()))) {
    throw Error("unlearn: retain pool empty");
  }

  EvalOptions eval_opts;
  eval_opts.split = EvalSplit::valid;
  eval_opts.max_new_tokens = cfg.eval_max_new_tokens;

  Rng rng(derive_seed(cfg.seed, 0x7261696eULL));
  std::vector<std::size_t> order(bundle.forget_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  AdamW opt(model.params(), cfg.learning_rate, cfg.weight_decay);
  std::vector<double> scores;
  ParamSnapshot best = model.snapshot("unlearn-epoch-0");
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    EpochRecord er;
    er.epoch = epoch;
    std::size_t batches = 0;
    bool aborted = false;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<QARecord> forget;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) {
        forget.push_back(bundle.forget_set[order[i]]);
      }
      std::vector<QARecord> retain;
      if (cfg.use_retain) {
        if (want_neighbors) {
          for (auto i : draw_indices(rng, retain_pool.size(), forget.size())) {
            retain.push_back(retain_pool[i]);
          }
        }
        if (want_world) {
          for (auto i : draw_indices(rng, world_pool.size(), forget.size())) {
            retain.push_back(world_pool[i]);
          }
        }
      }
      obj.swd.seed = derive_seed(cfg.seed, 0x5744ULL + step);
      const ParamSnapshot last_good = model.snapshot("last-good");
      try {
        const auto loss = combined_loss(model, ref, theta0, forget, retain, obj, idk_pool);
        if (!is_finite(loss.total)) {
          throw NumericError("objective is not finite");
        }
        opt.step(model.mutable_params(), loss.gradient);
        er.loss_total += loss.total;
        er.loss_forget += loss.forget;
        er.loss_retain += loss.retain;
        er.loss_reg += loss.reg;
        rec.step_losses.push_back(loss.total);
      } catch (const NumericError& e) {
        model.restore(last_good);
        rec.error = "aborted at step " + std::to_string(step) + ": " + e.what();
        aborted = true;
        break;
      }
      ++batches;
      ++step;
    }
    if (batches > 0) {
      const double n = static_cast<double>(batches);
      er.loss_total /= n;
      er.loss_forget /= n;
      er.loss_retain /= n;
      er.loss_reg /= n;
    }
    if (aborted) {
      rec.epochs.push_back(er);
      break;
    }

    const MetricReport val = evaluate(ModelView(model), bundle, eval_opts);
    const double fq_rq[] = {val.fq, val.rq};
    er.val_fq = val.fq;
    er.val_rq = val.rq;
    er.val_score = harmonic_mean(fq_rq);
    scores.push_back(*er.val_score);
    rec.epochs.push_back(er);
    const auto decision = early_stop_decision(scores);
    if (decision.best == scores.size() - 1) {
      best = model.snapshot("unlearn-epoch-" + std::to_string(epoch));
    }
    if (checkpoint_dir) {
      const auto file = *checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".ckpt");
      save_checkpoint(Checkpoint::of(model, "unlearn-epoch-" + std::to_string(epoch),
                                     {{"run", nlohmann::json(cfg)}}),
                      file);
      rec.checkpoint_paths.push_back(file.string());
    }
    if (cfg.early_stopping && decision.stop) {
      rec.stopped_early = true;
      break;
    }
  }

  if (!scores.empty()) {
    if (cfg.early_stopping) {
      rec.best_epoch = early_stop_decision(scores).best + 1;
      model.restore(best);
    } else {
      rec.best_epoch = scores.size();
    }
  }
  rec.wall_clock_seconds = seconds_since(start);
  return rec;
}

std::string guardrail_prompt(const std::string& entity) {
  return "if the question asks about " + entity +
         " , say you do not know the answer ; otherwise , answer as best as you can .";
}

ModelView guardrail_wrap(const TransformerLM& model, const std::string& entity) {
  return ModelView(model, guardrail_prompt(entity));
}

}  // namespace optout
