#include "optout/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "optout/checkpoint.hpp"
#include "optout/common.hpp"

namespace optout {

namespace fs = std::filesystem;

MethodSpec parse_method_spec(const std::string& spec, RegMetric default_reg) {
  MethodSpec s;
  s.name = spec;
  if (spec == "PRETRAINED" || spec == "GUARDRAIL") {
    s.kind = spec == "PRETRAINED" ? MethodSpec::Kind::pretrained : MethodSpec::Kind::guardrail;
    s.use_retain = false;
    s.reg_metric = RegMetric::none;
    return s;
  }
  if (spec.rfind("OPT_OUT", 0) == 0) {
    s.method = Method::OPT_OUT;
    if (spec == "OPT_OUT") {
      s.reg_metric = default_reg;
    } else if (spec.size() > 8 && spec[7] == '@') {
      s.reg_metric = parse_reg_metric(spec.substr(8));
    } else {
      throw ConfigError("unknown method spec '" + spec + "'");
    }
    if (s.reg_metric == RegMetric::none) {
      throw ConfigError("OPT_OUT needs a regularizer metric");
    }
    return s;
  }
  std::string base = spec;
  s.use_retain = false;
  if (base.size() > 3 && base.ends_with("+RT")) {
    base.resize(base.size() - 3);
    s.use_retain = true;
  }
  s.method = parse_method(base);
  if (s.method == Method::OPT_OUT) {
    throw ConfigError("unknown method spec '" + spec + "'");
  }
  s.reg_metric = RegMetric::none;
  return s;
}

TrainConfig train_config_for(const TrainConfig& base, const MethodSpec& spec) {
  TrainConfig c = base;
  c.method = spec.method;
  c.use_retain = spec.use_retain;
  c.reg_metric = spec.reg_metric;
  return c;
}

std::string corpus_hash(const PreparedCorpus& corpus) {
  const EntityBundle& b = corpus.bundle;
  nlohmann::json j = {{"target", b.target.id},
                      {"forget", b.forget_set},
                      {"world", b.world_set},
                      {"attacks", corpus.attacks},
                      {"idk_pool", corpus.idk_pool}};
  for (const auto& n : b.neighbor_entities) {
    j["neighbors"].push_back({{"id", n.entity.id}, {"records", n.records}});
  }
  return to_hex(fnv1a64(j.dump()));
}

namespace {

void write_json(const fs::path& file, const nlohmann::json& j) {
  write_file_atomic(file, j.dump(2) + "\n");
}

nlohmann::json read_json(const fs::path& file) {
  nlohmann::json j = nlohmann::json::parse(read_file(file), nullptr, false);
  if (j.is_discarded()) {
    throw LoadError("not valid JSON: " + file.string());
  }
  return j;
}

nlohmann::json cell_id(std::uint64_t target, const std::string& method, std::uint64_t seed) {
  return {{"target", target}, {"method", method}, {"seed", seed}};
}

}  // namespace

Experiment::Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) {}

fs::path Experiment::corpus_dir(std::uint64_t target) const {
  return root() / "corpus" / ("target_" + std::to_string(target));
}

fs::path Experiment::cell_dir(std::uint64_t target, const std::string& method,
                              std::uint64_t seed) const {
  return root() / "cells" / ("target_" + std::to_string(target)) / method /
         ("seed_" + std::to_string(seed));
}

PreparedCorpus Experiment::prepare(std::uint64_t target) const {
  PrepareConfig pc = cfg_.prepare;
  pc.world.seed = target;
  std::unique_ptr<CompletionBackend> backend;
  if (cfg_.backend == "http") {
    backend = HttpBackend::from_env();
  } else {
    backend = std::make_unique<MockBackend>(target);
  }
  PreparedCorpus corpus = prepare_corpus(pc, *backend);
  save_prepared(corpus, corpus_dir(target));
  return corpus;
}

PreparedCorpus Experiment::corpus(std::uint64_t target) const {
  const fs::path dir = corpus_dir(target);
  if (fs::exists(dir / "manifest.json")) {
    return load_prepared(dir);
  }
  return prepare(target);
}

fs::path Experiment::pretrained_path(std::uint64_t target, std::uint64_t seed, bool oracle) const {
  ModelConfig mc = cfg_.model;
  mc.seed = seed;
  PretrainConfig pc = cfg_.pretrain;
  pc.seed = seed;
  pc.include_forget = !oracle;
  const nlohmann::json key = {
      {"corpus", corpus_hash(corpus(target))}, {"model", mc}, {"pretrain", pc}};
  return root() / "checkpoints" / ((oracle ? "oracle-" : "pretrained-") + config_hash(key) + ".ckpt");
}

TransformerLM Experiment::pretrained(std::uint64_t target, std::uint64_t seed, bool oracle) const {
  const fs::path file = pretrained_path(target, seed, oracle);
  if (fs::exists(file)) {
    return load_checkpoint(file).build();
  }
  const PreparedCorpus data = corpus(target);
  ModelConfig mc = cfg_.model;
  mc.seed = seed;
  PretrainConfig pc = cfg_.pretrain;
  pc.seed = seed;
  pc.include_forget = !oracle;
  TransformerLM model(mc, build_vocabulary(data));
  const RunRecord rec = pretrain(model, data.bundle, pc, file);
  write_json(fs::path(file).replace_extension(".json"), rec);
  return model;
}

RunRecord Experiment::unlearn(std::uint64_t target, const std::string& method,
                              std::uint64_t seed) const {
  const MethodSpec spec = parse_method_spec(method, cfg_.train.reg_metric);
  const fs::path dir = cell_dir(target, method, seed);
  fs::create_directories(dir);
  TransformerLM model = pretrained(target, seed);
  RunRecord rec;
  if (spec.kind != MethodSpec::Kind::train) {
    rec.kind = "unlearn";
    rec.method = method;
  } else {
    TrainConfig tc = train_config_for(cfg_.train, spec);
    tc.seed = seed;
    const PreparedCorpus data = corpus(target);
    rec = optout::unlearn(model, data.bundle, tc, data.idk_pool);
    rec.method = method;
    if (!rec.error.empty()) {
      warn("unlearn " + method + ": " + rec.error);
    }
  }
  save_checkpoint(Checkpoint::of(model, "unlearned", cell_id(target, method, seed)),
                  dir / "model.ckpt");
  write_json(dir / "run_record.json", rec);
  return rec;
}

std::pair<TransformerLM, std::string> Experiment::cell_model(std::uint64_t target,
                                                             const std::string& method,
                                                             std::uint64_t seed) const {
  const MethodSpec spec = parse_method_spec(method, cfg_.train.reg_metric);
  const fs::path file = cell_dir(target, method, seed) / "model.ckpt";
  if (!fs::exists(file)) {
    unlearn(target, method, seed);
  }
  std::string prefix;
  if (spec.kind == MethodSpec::Kind::guardrail) {
    prefix = guardrail_prompt(corpus(target).bundle.target.name);
  }
  return {load_checkpoint(file).build(), prefix};
}

std::optional<std::vector<double>> Experiment::oracle_truth_ratios(std::uint64_t target,
                                                                   std::uint64_t seed) const {
  if (!cfg_.eval.ks_oracle) {
    return std::nullopt;
  }
  const TransformerLM oracle = pretrained(target, seed, true);
  const PreparedCorpus data = corpus(target);
  std::vector<double> trs;
  score_records(ModelView(oracle), data.bundle.forget_set, cfg_.eval.max_new_tokens, true, &trs);
  return trs;
}

MetricReport Experiment::evaluate(std::uint64_t target, const std::string& method,
                                  std::uint64_t seed) const {
  const auto [model, prefix] = cell_model(target, method, seed);
  const PreparedCorpus data = corpus(target);
  EvalOptions opts;
  opts.split = EvalSplit::test;
  opts.max_new_tokens = cfg_.eval.max_new_tokens;
  opts.oracle_forget_truth_ratios = oracle_truth_ratios(target, seed);
  const MetricReport rep = optout::evaluate(ModelView(model, prefix), data.bundle, opts);
  write_json(cell_dir(target, method, seed) / "metrics.json", rep);
  return rep;
}

CellResult Experiment::attack(std::uint64_t target, const std::string& method,
                              std::uint64_t seed) const {
  const auto [model, prefix] = cell_model(target, method, seed);
  const PreparedCorpus data = corpus(target);
  const ModelView view(model, prefix);
  CellResult res;
  res.target = target;
  res.method = method;
  res.seed = seed;
  const auto& forget = data.bundle.forget_set;
  res.mia = mia_attack(view, forget, paraphrased_copies(forget), cfg_.mia);
  res.adversarial = adversarial_eval(view, data.attacks, cfg_.eval.max_new_tokens);
  const fs::path dir = cell_dir(target, method, seed);
  write_json(dir / "mia.json", res.mia);
  write_json(dir / "adversarial.json", res.adversarial);
  return res;
}

CellResult Experiment::run_cell(std::uint64_t target, const std::string& method,
                                std::uint64_t seed) const {
  unlearn(target, method, seed);
  const MetricReport metrics = evaluate(target, method, seed);
  CellResult res = attack(target, method, seed);
  res.metrics = metrics;
  return res;
}

void Experiment::write_manifest(const std::vector<nlohmann::json>& cells) const {
  fs::create_directories(root());
  const fs::path file = root() / "manifest.json";
  std::vector<nlohmann::json> all;
  if (fs::exists(file)) {
    const auto old = read_json(file);
    if (old.contains("cells")) {
      for (const auto& c : old.at("cells")) all.push_back(c);
    }
  }
  for (const auto& c : cells) {
    if (std::find(all.begin(), all.end(), c) == all.end()) all.push_back(c);
  }
  const nlohmann::json cfg = cfg_;
  // The hash identifies the experiment, not where it was written.
  nlohmann::json hashed = cfg;
  hashed.erase("run_dir");
  write_json(file, {{"config", cfg}, {"config_hash", config_hash(hashed)}, {"cells", all}});
}

nlohmann::json Experiment::run_matrix() const {
  std::vector<nlohmann::json> cells;
  for (auto target : cfg_.matrix.targets) {
    for (auto seed : cfg_.matrix.seeds) {
      for (const auto& method : cfg_.matrix.methods) {
        cells.push_back(cell_id(target, method, seed));
      }
    }
  }
  write_manifest(cells);
  for (const auto& c : cells) {
    const auto target = c.at("target").get<std::uint64_t>();
    const auto method = c.at("method").get<std::string>();
    const auto seed = c.at("seed").get<std::uint64_t>();
    try {
      run_cell(target, method, seed);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      warn("cell target " + std::to_string(target) + " " + method + " seed " +
           std::to_string(seed) + " failed: " + e.what());
    }
  }
  return write_report(root()).json;
}

// ----------------------------- report -----------------------------

namespace {

struct Column {
  const char* name;
  double (*get)(const MetricReport&);
};

const std::vector<Column>& columns() {
  static const std::vector<Column> cols{
      {"Forget Prob.", [](const MetricReport& r) { return r.forget.probability; }},
      {"Forget ROUGE", [](const MetricReport& r) { return r.forget.rouge_l; }},
      {"Forget TR", [](const MetricReport& r) { return r.forget.truth_ratio; }},
      {"Retain Prob.", [](const MetricReport& r) { return r.retain.probability; }},
      {"Retain ROUGE", [](const MetricReport& r) { return r.retain.rouge_l; }},
      {"Retain TR", [](const MetricReport& r) { return r.retain.truth_ratio; }},
      {"World Prob.", [](const MetricReport& r) { return r.world.probability; }},
      {"World ROUGE", [](const MetricReport& r) { return r.world.rouge_l; }},
      {"World TR", [](const MetricReport& r) { return r.world.truth_ratio; }},
      {"FQ", [](const MetricReport& r) { return r.fq; }},
      {"RQ", [](const MetricReport& r) { return r.rq; }},
      {"Utility", [](const MetricReport& r) { return r.utility; }},
  };
  return cols;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

struct Row {
  std::string method;
  std::vector<double> sums;
  double ks_sum = 0.0;
  std::size_t ks_n = 0;
  double mia_sum = 0.0;
  std::size_t mia_n = 0;
  std::size_t n = 0;
};

}  // namespace

RenderedReport render_report(const fs::path& run_dir) {
  RenderedReport out;
  nlohmann::json manifest = nlohmann::json::object();
  if (fs::exists(run_dir / "manifest.json")) {
    manifest = read_json(run_dir / "manifest.json");
  }

  // Cells found on disk, in path order.
  std::vector<std::pair<nlohmann::json, fs::path>> found;
  const fs::path cells_root = run_dir / "cells";
  if (fs::exists(cells_root)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(cells_root)) {
      if (e.is_regular_file() && e.path().filename() == "metrics.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const fs::path seed_dir = f.parent_path();
      const fs::path method_dir = seed_dir.parent_path();
      const fs::path target_dir = method_dir.parent_path();
      nlohmann::json id = {
          {"target", std::stoull(target_dir.filename().string().substr(7))},
          {"method", method_dir.filename().string()},
          {"seed", std::stoull(seed_dir.filename().string().substr(5))}};
      found.emplace_back(id, seed_dir);
    }
  }

  std::vector<std::string> order;
  if (manifest.contains("cells")) {
    for (const auto& c : manifest.at("cells")) {
      const auto m = c.at("method").get<std::string>();
      if (std::find(order.begin(), order.end(), m) == order.end()) order.push_back(m);
    }
  }
  std::set<std::string> extra;
  for (const auto& [id, dir] : found) {
    const auto m = id.at("method").get<std::string>();
    if (std::find(order.begin(), order.end(), m) == order.end()) extra.insert(m);
  }
  order.insert(order.end(), extra.begin(), extra.end());

  std::map<std::string, Row> rows;
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& [id, dir] : found) {
    const MetricReport rep = read_json(dir / "metrics.json").get<MetricReport>();
    Row& row = rows[id.at("method").get<std::string>()];
    row.method = id.at("method").get<std::string>();
    row.sums.resize(columns().size(), 0.0);
    nlohmann::json cell = id;
    for (std::size_t i = 0; i < columns().size(); ++i) {
      const double v = columns()[i].get(rep);
      row.sums[i] += v;
      cell[columns()[i].name] = v;
    }
    if (rep.fq_ks_pvalue) {
      row.ks_sum += *rep.fq_ks_pvalue;
      ++row.ks_n;
      cell["FQ* (KS)"] = *rep.fq_ks_pvalue;
    }
    if (fs::exists(dir / "mia.json")) {
      const double acc = read_json(dir / "mia.json").at("accuracy_mean").get<double>();
      row.mia_sum += acc;
      ++row.mia_n;
      cell["MIA"] = acc;
    }
    ++row.n;
    cells.push_back(cell);
  }

  nlohmann::json gaps = nlohmann::json::array();
  if (manifest.contains("cells")) {
    for (const auto& c : manifest.at("cells")) {
      const bool have = std::any_of(found.begin(), found.end(),
                                    [&](const auto& f) { return f.first == c; });
      if (!have) gaps.push_back(c);
    }
  }
  if (!gaps.empty()) {
    warn("report: " + std::to_string(gaps.size()) + " cell(s) without metrics");
  }

  std::string md = "| Method | n |";
  std::string rule = "|---|---|";
  for (const auto& c : columns()) {
    md += std::string(" ") + c.name + " |";
    rule += "---|";
  }
  md += " FQ* (KS) | MIA (%) |\n" + rule + "---|---|\n";
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& name : order) {
    const auto it = rows.find(name);
    if (it == rows.end()) continue;
    const Row& row = it->second;
    const double n = static_cast<double>(row.n);
    nlohmann::json means = nlohmann::json::object();
    md += "| " + name + " | " + std::to_string(row.n) + " |";
    for (std::size_t i = 0; i < columns().size(); ++i) {
      means[columns()[i].name] = row.sums[i] / n;
      md += " " + fixed(row.sums[i] / n) + " |";
    }
    if (row.ks_n > 0) {
      means["FQ* (KS)"] = row.ks_sum / static_cast<double>(row.ks_n);
      md += " " + fixed(row.ks_sum / static_cast<double>(row.ks_n)) + " |";
    } else {
      md += " - |";
    }
    if (row.mia_n > 0) {
      means["MIA"] = row.mia_sum / static_cast<double>(row.mia_n);
      md += " " + fixed(row.mia_sum / static_cast<double>(row.mia_n)) + " |";
    } else {
      md += " - |";
    }
    md += "\n";
    methods.push_back({{"method", name}, {"n", row.n}, {"means", means}});
  }

  std::string header = "# Unlearning report\n\n";
  if (manifest.contains("config_hash")) {
    header += "config hash: " + manifest.at("config_hash").get<std::string>() + "\n";
    const auto& m = manifest.at("config").at("matrix");
    header += "targets: " + m.at("targets").dump() + "\nseeds: " + m.at("seeds").dump() + "\n";
  }
  header += "\nMeans over targets and seeds; test split.\n\n";
  std::string tail;
  if (!gaps.empty()) {
    tail = "\nMissing cells:\n";
    for (const auto& g : gaps) tail += "- " + g.dump() + "\n";
  }
  out.markdown = header + md + tail;
  out.json = {{"config_hash", manifest.value("config_hash", std::string())},
              {"targets", manifest.contains("config") ? manifest["config"]["matrix"]["targets"]
                                                      : nlohmann::json::array()},
              {"seeds", manifest.contains("config") ? manifest["config"]["matrix"]["seeds"]
                                                    : nlohmann::json::array()},
              {"methods", methods},
              {"cells", cells},
              {"gaps", gaps},
              {"partial", !gaps.empty()}};
  return out;
}

RenderedReport write_report(const fs::path& run_dir) {
  RenderedReport r = render_report(run_dir);
  fs::create_directories(run_dir);
  write_file_atomic(run_dir / "report.md", r.markdown);
  write_json(run_dir / "report.json", r.json);
  return r;
}

}  // namespace optout
