// Acceptance run: one PASS/FAIL line per criterion, exit status 1 when any fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "optout/attacks.hpp"
#include "optout/checkpoint.hpp"
#include "optout/experiment.hpp"
#include "optout/ot_core.hpp"
#include "test_support.hpp"

namespace {

using namespace optout;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ----------------------------- 1. OT oracle -----------------------------

Outcome ot_oracle_equivalence() {
  const auto start = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    const double p = trial % 2 == 0 ? 1.0 : 2.0;
    std::vector<double> xs(n), ys(n);
    for (auto& x : xs) x = 4.0 * rng.uniform() - 2.0;
    for (auto& y : ys) y = 4.0 * rng.uniform() - 2.0;
    Matrix cost(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) cost(i, j) = std::pow(std::abs(xs[i] - ys[j]), p);
    }
    const std::vector<double> w(n, 1.0 / static_cast<double>(n));
    const double lp = ot::exact_ot(w, w, cost).total_cost;
    const double closed = std::pow(ot::wasserstein_1d(xs, ys, p), p);
    worst = std::max(worst, std::abs(lp - closed));
  }
  const double t = seconds_since(start);
  return {worst <= 1e-9 && t < 10.0, "max |diff| " + fmt("%.2e", worst) + ", " + fmt("%.2f s", t)};
}

// ----------------------------- 2. SWD analytic -----------------------------

Outcome swd_analytic() {
  const auto start = Clock::now();
  Rng rng(202);
  double worst = 0.0;
  for (std::size_t d : {2, 4, 8}) {
    Matrix a(8, d);
    for (auto& x : a.data) x = rng.normal();
    std::vector<double> t(d);
    double norm2 = 0.0;
    for (auto& x : t) {
      x = rng.normal();
      norm2 += x * x;
    }
    Matrix b = a;
    for (std::size_t i = 0; i < b.rows; ++i) {
      for (std::size_t k = 0; k < d; ++k) b(i, k) += t[k];
    }
    ot::SWDConfig cfg;
    cfg.p = 2.0;
    cfg.num_projections = 100000;
    cfg.seed = 300 + d;
    const double expect = std::sqrt(norm2) / std::sqrt(static_cast<double>(d));
    worst = std::max(worst, std::abs(ot::sliced_wasserstein(a, b, cfg) - expect) / expect);
  }
  const double t = seconds_since(start);
  return {worst < 0.01 && t < 30.0, "max rel err " + fmt("%.4f", worst) + ", " + fmt("%.2f s", t)};
}

// ----------------------------- 3. gradients -----------------------------

Outcome gradient_suite() {
  const auto start = Clock::now();
  using testing::qa;
  const std::vector<QARecord> forget{qa("where is alpha born", "gamma city", "", {}, "red blue"),
                                     qa("what is beta", "red", "", {}, "blue"),
                                     qa("where is delta", "blue city red", "", {}, "red")};
  const std::vector<QARecord> retain{qa("where is gamma born", "delta city"), qa("what is red", "blue")};
  const std::vector<std::string> pool{"red blue", "blue"};

  double worst = 0.0;
  std::string worst_name;
  std::size_t params = 0;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    TransformerLM model(testing::tiny_config(seed), testing::tokenizer16());
    params = model.num_parameters();
    const Reference ref(model);
    const ParamSet theta0 = model.params();
    testing::jitter(model, 0.1, seed + 40);
    ObjectiveConfig combined;
    combined.method = Method::OPT_OUT;
    combined.lambda_reg = 0.1;
    combined.reg_metric = RegMetric::wasserstein;
    combined.swd.seed = 17;
    combined.swd.num_projections = 16;

    const std::vector<std::pair<std::string, std::function<double(ParamSet*)>>> losses{
        {"GA", [&](ParamSet* g) { return ga_loss(model, forget, g); }},
        {"NPO", [&](ParamSet* g) { return npo_loss(model, ref, forget, 0.5, g); }},
        {"DPO-IDK", [&](ParamSet* g) { return dpo_idk_loss(model, ref, forget, 0.5, g); }},
        {"IDK", [&](ParamSet* g) { return idk_loss(model, forget, pool, 2, g); }},
        {"RT", [&](ParamSet* g) { return retain_loss(model, retain, g); }},
        {"combined", [&](ParamSet* g) {
           const auto r = combined_loss(model, ref, theta0, forget, retain, combined, pool, g != nullptr);
           if (g) *g = r.gradient;
           return r.total;
         }},
    };
    for (const auto& [name, loss] : losses) {
      ParamSet g = model.params().zeros_like();
      loss(&g);
      for (const auto& c : testing::probe_coordinates(model.params(), 40, seed * 7 + name.size())) {
        const double numeric = testing::finite_difference(model, c, [&] { return loss(nullptr); });
        const double err = testing::relative_error(g[c.param].value.data[c.index], numeric);
        if (err > worst) {
          worst = err;
          worst_name = name;
        }
      }
    }
  }
  const double t = seconds_since(start);
  return {worst < 1e-4 && params < 50000 && t < 120.0,
          "max rel err " + fmt("%.2e", worst) + " (" + worst_name + "), " + std::to_string(params) +
              " params, " + fmt("%.2f s", t)};
}

// ----------------------------- 4. NPO -> GA -----------------------------

Outcome npo_ga_limit() {
  TransformerLM model(testing::tiny_config(5), testing::tokenizer16());
  const Reference ref(model);
  testing::jitter(model, 0.2, 8);
  using testing::qa;
  const std::vector<QARecord> batch{qa("where is alpha born", "gamma city"), qa("what is beta", "red"),
                                    qa("where is delta", "blue city red")};
  const double eta = 1e-4;
  ParamSet g_npo = model.params().zeros_like();
  npo_loss(model, ref, batch, eta, &g_npo);
  ParamSet g_ga = model.params().zeros_like();
  ga_loss(model, batch, &g_ga);
  auto a = g_npo.flatten();
  for (auto& x : a) x *= 2.0 / eta;
  const auto b = g_ga.flatten();
  const double cos = std::inner_product(a.begin(), a.end(), b.begin(), 0.0) /
                     std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0) *
                               std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
  return {cos > 0.999, "cosine " + fmt("%.6f", cos)};
}

// ----------------------------- 5. lambda = 0 -----------------------------

Outcome lambda_zero_reduction() {
  const EntityBundle bundle = testing::fixture_bundle();
  TransformerLM base(testing::fixture_config(3), testing::fixture_tokenizer());
  testing::fit(base, bundle.forget_set, 40);
  TrainConfig opt_out;
  opt_out.method = Method::OPT_OUT;
  opt_out.lambda_reg = 0.0;
  opt_out.batch_size = 1;  // 3 steps per epoch
  opt_out.epochs = 17;
  opt_out.early_stopping = false;
  opt_out.learning_rate = 1e-3;
  opt_out.seed = 5;
  opt_out.eval_max_new_tokens = 4;
  TrainConfig npo = opt_out;
  npo.method = Method::NPO;
  npo.use_retain = true;
  TransformerLM a = base, b = base;
  const RunRecord ra = unlearn(a, bundle, opt_out);
  const RunRecord rb = unlearn(b, bundle, npo);
  const std::size_t n = std::min(ra.step_losses.size(), rb.step_losses.size());
  const bool identical = ra.step_losses.size() == rb.step_losses.size() && n >= 50 &&
                         std::memcmp(ra.step_losses.data(), rb.step_losses.data(), n * sizeof(double)) == 0;
  return {identical, std::to_string(ra.step_losses.size()) + " vs " + std::to_string(rb.step_losses.size()) +
                         " steps, " + (identical ? "bit-identical" : "differ")};
}

// ----------------------------- 6. metric identities -----------------------------

Outcome metric_identities() {
  bool ok = true;
  for (const char* s : {"paris", "the city of paris", "in 1999 she moved to rome"}) {
    ok = ok && rouge_l_recall(s, s) == 1.0;
  }
  TransformerLM model(testing::tiny_config(2), testing::tokenizer16());
  testing::make_uniform(model);
  const std::vector<std::string> perturbed{"red", "blue", "gamma", "delta", "city"};
  const double tr1 = truth_ratio(ModelView(model), "where is alpha born", "beta", perturbed);
  const std::vector<std::string> two_word{"red blue", "blue red", "gamma city", "delta city", "city red"};
  const double tr2 = truth_ratio(ModelView(model), "what is beta", "alpha city", two_word);
  ok = ok && std::abs(tr1 - 1.0) <= 1e-6 && std::abs(tr2 - 1.0) <= 1e-6;
  const std::vector<double> with_zero{0.7, 0.0, 0.9};
  const std::vector<double> only_zero{0.0};
  ok = ok && harmonic_mean(with_zero) == 0.0 && harmonic_mean(only_zero) == 0.0;
  return {ok, "uniform TR " + fmt("%.9f", tr1) + " / " + fmt("%.9f", tr2)};
}

// ----------------------------- 7 & 8. end to end -----------------------------

struct EndToEnd {
  std::vector<double> pre_forget, pre_retain;
  std::vector<double> oo_forget, oo_retain;
  std::vector<double> ga_retain;
  std::vector<double> both_neighbor_rq, world_neighbor_rq;
  double seconds_7 = 0.0;
  double seconds_8 = 0.0;
  std::size_t forget_n = 0, retain_n = 0;
};

double neighbor_rq(const MetricReport& r) { return retain_quality(r.retain, r.retain); }

EndToEnd run_end_to_end() {
  EndToEnd out;
  PrepareConfig prep;  // 1 target, 2 neighbors, 60 facts each
  MockBackend backend(prep.world.seed);
  const PreparedCorpus corpus = prepare_corpus(prep, backend);
  const EntityBundle& bundle = corpus.bundle;
  out.forget_n = bundle.forget_set.size();
  out.retain_n = bundle.all_retain_records().size();
  const Tokenizer tok = build_vocabulary(corpus);
  EvalOptions eval;
  eval.truth_ratio = true;

  for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
    auto t7 = Clock::now();
    ModelConfig mc;
    mc.seed = seed;
    TransformerLM pre(mc, tok);
    PretrainConfig pc;
    pc.seed = seed;
    pretrain(pre, bundle, pc);
    const MetricReport pre_m = evaluate(ModelView(pre), bundle, eval);
    out.pre_forget.push_back(pre_m.forget.probability);
    out.pre_retain.push_back(pre_m.retain.probability);

    TrainConfig oo;
    oo.seed = seed;
    TransformerLM m_oo = pre;
    unlearn(m_oo, bundle, oo, corpus.idk_pool);
    const MetricReport oo_m = evaluate(ModelView(m_oo), bundle, eval);
    out.oo_forget.push_back(oo_m.forget.probability);
    out.oo_retain.push_back(oo_m.retain.probability);

    TrainConfig ga;
    ga.seed = seed;
    ga.method = Method::GA;
    ga.use_retain = false;
    ga.early_stopping = false;
    TransformerLM m_ga = pre;
    unlearn(m_ga, bundle, ga);
    out.ga_retain.push_back(evaluate(ModelView(m_ga), bundle, eval).retain.probability);
    out.seconds_7 += seconds_since(t7);

    // Both ablation arms train for the full budget: early stopping selects
    // on validation RQ, which contains neighbor records and would let the
    // world-only arm pick an epoch by neighbor performance.
    auto t8 = Clock::now();
    TrainConfig both = oo;
    both.early_stopping = false;
    TransformerLM m_b = pre;
    unlearn(m_b, bundle, both, corpus.idk_pool);
    out.both_neighbor_rq.push_back(neighbor_rq(evaluate(ModelView(m_b), bundle, eval)));
    TrainConfig world_only = both;
    world_only.retain_source = RetainSource::world_only;
    TransformerLM m_w = pre;
    unlearn(m_w, bundle, world_only, corpus.idk_pool);
    out.world_neighbor_rq.push_back(neighbor_rq(evaluate(ModelView(m_w), bundle, eval)));
    out.seconds_8 += seconds_since(t8);

    std::cout << "  seed " << seed << ": forget P " << fmt("%.4f", pre_m.forget.probability) << " -> "
              << fmt("%.4f", oo_m.forget.probability) << ", retain P "
              << fmt("%.4f", pre_m.retain.probability) << " -> " << fmt("%.4f", oo_m.retain.probability)
              << ", GA retain P " << fmt("%.4f", out.ga_retain.back()) << ", neighbor RQ "
              << fmt("%.4f", out.both_neighbor_rq.back()) << " vs world-only "
              << fmt("%.4f", out.world_neighbor_rq.back()) << std::endl;
  }
  return out;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Outcome end_to_end_trend(const EndToEnd& e) {
  const double forget_ratio = mean(e.oo_forget) / mean(e.pre_forget);
  const double retain_ratio = mean(e.oo_retain) / mean(e.pre_retain);
  const double ga_ratio = mean(e.ga_retain) / mean(e.pre_retain);
  const bool pass = forget_ratio <= 0.5 && retain_ratio >= 0.85 && ga_ratio < 0.5 && e.seconds_7 < 900.0;
  return {pass, std::to_string(e.forget_n) + " forget / " + std::to_string(e.retain_n) +
                    " retain records; forget P ratio " + fmt("%.3f", forget_ratio) + ", retain P ratio " +
                    fmt("%.3f", retain_ratio) + ", GA retain ratio " + fmt("%.3f", ga_ratio) + ", " +
                    fmt("%.0f s", e.seconds_7)};
}

Outcome retain_ablation(const EndToEnd& e) {
  const double both = mean(e.both_neighbor_rq);
  const double world = mean(e.world_neighbor_rq);
  return {world < both, "neighbor RQ world-only " + fmt("%.4f", world) + " < neighbors+world " +
                            fmt("%.4f", both) + ", " + fmt("%.0f s", e.seconds_8)};
}

// ----------------------------- 9. MIA -----------------------------

Outcome mia_calibration() {
  Rng rng(909);
  double total = 0.0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> a(50), b(50);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    total += mia_from_losses(a, b).accuracy_mean;
  }
  const double equal = total / trials;
  std::vector<double> lo(50), hi(50);
  for (std::size_t i = 0; i < 50; ++i) {
    lo[i] = 0.5 + 0.01 * rng.uniform();
    hi[i] = 3.0 + 0.01 * rng.uniform();
  }
  const double separated = mia_from_losses(lo, hi).accuracy_mean;
  return {std::abs(equal - 50.0) <= 5.0 && separated == 100.0,
          "equal " + fmt("%.2f%%", equal) + ", separated " + fmt("%.1f%%", separated)};
}

// ----------------------------- 10. KS -----------------------------

Outcome ks_calibration() {
  Rng rng(1010);
  std::vector<double> same(100);
  for (auto& x : same) x = rng.normal();
  const double p_same = ks_two_sample(same, same).p_value;
  double total = 0.0;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(100), b(100);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    total += ks_two_sample(a, b).p_value;
  }
  const double mean_p = total / 200.0;
  return {p_same == 1.0 && mean_p >= 0.4 && mean_p <= 0.6,
          "identical p " + fmt("%.3f", p_same) + ", mean p " + fmt("%.3f", mean_p)};
}

// ----------------------------- 11. determinism -----------------------------

nlohmann::json tiny_matrix_config(const fs::path& run_dir) {
  nlohmann::json j = nlohmann::json::parse(R"({
    "prepare": {"world": {"facts_per_entity": 12, "world_records": 12, "idk_pool_size": 10},
                "attacks_per_type": 1},
    "model": {"d_model": 16, "n_layers": 1, "d_ff": 32, "init_std": 0.1},
    "pretrain": {"max_epochs": 8, "batch_size": 16, "learning_rate": 0.01},
    "train": {"epochs": 2, "swd_projections": 8, "eval_max_new_tokens": 6},
    "eval": {"max_new_tokens": 6},
    "mia": {"folds": 2}
  })");
  j["run_dir"] = run_dir.string();
  return j;
}

// Every metric JSON under a run directory, keyed by relative path.
std::map<std::string, std::string> metric_files(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    const auto name = e.path().filename().string();
    if (name == "metrics.json" || name == "mia.json" || name == "adversarial.json" ||
        name == "report.json") {
      out[fs::relative(e.path(), root).string()] = read_file(e.path());
    }
  }
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(OPTOUT_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  const fs::path scratch = fs::temp_directory_path() / "optout_acceptance_determinism";
  fs::remove_all(scratch);
  std::vector<std::map<std::string, std::string>> runs;

  for (const char* name : {"api_a", "api_b"}) {
    Experiment(parse_experiment_config(tiny_matrix_config(scratch / name))).run_matrix();
    runs.push_back(metric_files(scratch / name));
  }
  for (const char* name : {"cli_a", "cli_b"}) {
    fs::create_directories(scratch);
    const fs::path cfg = scratch / (std::string(name) + ".json");
    std::ofstream(cfg) << tiny_matrix_config(scratch / name).dump(2);
    const std::string c = "-c " + cfg.string();
    const int codes = run_cli("prepare " + c) + run_cli("pretrain " + c) +
                      run_cli("unlearn " + c + " --method NPO+RT") +
                      run_cli("evaluate " + c + " --method NPO+RT") +
                      run_cli("attack " + c + " --method NPO+RT") + run_cli("report " + c) +
                      run_cli("run-matrix " + c);
    if (codes != 0) return {false, std::string("CLI run ") + name + " exited non-zero"};
    runs.push_back(metric_files(scratch / name));
  }
  fs::remove_all(scratch);
  const bool api_same = runs[0] == runs[1] && !runs[0].empty();
  const bool cli_same = runs[2] == runs[3] && !runs[2].empty();
  return {api_same && cli_same, std::to_string(runs[0].size()) + " API and " +
                                    std::to_string(runs[2].size()) + " CLI metric files compared"};
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 OT oracle equivalence", ot_oracle_equivalence},
      {"2 SWD analytic translation", swd_analytic},
      {"3 gradient suite", gradient_suite},
      {"4 NPO to GA limit", npo_ga_limit},
      {"5 lambda=0 reduction", lambda_zero_reduction},
      {"6 metric identities", metric_identities},
  };
  int failures = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& run) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  };
  for (const auto& [name, run] : criteria) report(name, run);

  std::optional<EndToEnd> e2e;
  std::string e2e_error;
  try {
    e2e = run_end_to_end();
  } catch (const std::exception& e) {
    e2e_error = e.what();
  }
  auto from_e2e = [&](Outcome (*f)(const EndToEnd&)) {
    return [&, f] { return e2e ? f(*e2e) : Outcome{false, "exception: " + e2e_error}; };
  };
  report("7 end-to-end trend", from_e2e(end_to_end_trend));
  report("8 retain-data ablation", from_e2e(retain_ablation));
  report("9 MIA calibration", mia_calibration);
  report("10 KS calibration", ks_calibration);
  report("11 determinism", determinism);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
