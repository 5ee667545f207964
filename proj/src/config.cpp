#include "optout/config.hpp"

#include "optout/checkpoint.hpp"
#include "optout/common.hpp"
#include "optout/data_model.hpp"
#include "optout/experiment.hpp"

namespace optout {

namespace {

void check_keys(const nlohmann::json& given, const nlohmann::json& defaults,
                const std::string& path) {
  if (!given.is_object()) {
    throw ConfigError("config: " + (path.empty() ? std::string("root") : path) +
                      " must be an object");
  }
  for (const auto& [key, value] : given.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!defaults.contains(key)) {
      throw ConfigError("config: unknown key '" + here + "'");
    }
    if (defaults.at(key).is_object()) {
      check_keys(value, defaults.at(key), here);
    }
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) {
    j.at(key).get_to(out);
  }
}

}  // namespace

void to_json(nlohmann::json& j, const PrepareConfig& c) {
  const auto& w = c.world;
  j = {{"world",
        {{"seed", w.seed},
         {"num_neighbors", w.num_neighbors},
         {"facts_per_entity", w.facts_per_entity},
         {"world_records", w.world_records},
         {"num_choices", w.num_choices},
         {"idk_pool_size", w.idk_pool_size}}},
       {"split",
        {{"ratios", c.split.ratios},
         {"seed", c.split.seed},
         {"per_entity_split", c.split.per_entity_split}}},
       {"dedup_threshold", c.dedup_threshold},
       {"attacks_per_type", c.attacks_per_type},
       {"idk_seed", c.idk_seed},
       {"generation",
        {{"cache_dir", c.generation.cache_dir ? nlohmann::json(c.generation.cache_dir->string())
                                              : nlohmann::json()},
         {"max_retries", c.generation.max_retries},
         {"base_delay_ms", c.generation.base_delay.count()},
         {"parallelism", c.generation.parallelism}}}};
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json mia = {{"folds", c.mia.folds}, {"seeds", c.mia.seeds}, {"l2", c.mia.l2}};
  j = {{"run_dir", c.run_dir},
       {"backend", c.backend},
       {"method", c.method},
       {"prepare", c.prepare},
       {"model", c.model},
       {"pretrain", c.pretrain},
       {"train", c.train},
       {"eval", {{"max_new_tokens", c.eval.max_new_tokens}, {"ks_oracle", c.eval.ks_oracle}}},
       {"mia", mia},
       {"matrix",
        {{"targets", c.matrix.targets}, {"methods", c.matrix.methods}, {"seeds", c.matrix.seeds}}}};
}

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  ExperimentConfig c;
  check_keys(j, nlohmann::json(c), "");
  try {
    read(j, "run_dir", c.run_dir);
    read(j, "backend", c.backend);
    read(j, "method", c.method);
    if (j.contains("prepare")) {
      const auto& p = j.at("prepare");
      if (p.contains("world")) {
        const auto& w = p.at("world");
        read(w, "seed", c.prepare.world.seed);
        read(w, "num_neighbors", c.prepare.world.num_neighbors);
        read(w, "facts_per_entity", c.prepare.world.facts_per_entity);
        read(w, "world_records", c.prepare.world.world_records);
        read(w, "num_choices", c.prepare.world.num_choices);
        read(w, "idk_pool_size", c.prepare.world.idk_pool_size);
      }
      if (p.contains("split")) {
        const auto& s = p.at("split");
        read(s, "ratios", c.prepare.split.ratios);
        read(s, "seed", c.prepare.split.seed);
        read(s, "per_entity_split", c.prepare.split.per_entity_split);
      }
      read(p, "dedup_threshold", c.prepare.dedup_threshold);
      read(p, "attacks_per_type", c.prepare.attacks_per_type);
      read(p, "idk_seed", c.prepare.idk_seed);
      if (p.contains("generation")) {
        const auto& g = p.at("generation");
        if (g.contains("cache_dir") && !g.at("cache_dir").is_null()) {
          c.prepare.generation.cache_dir = g.at("cache_dir").get<std::string>();
        }
        read(g, "max_retries", c.prepare.generation.max_retries);
        long long delay = c.prepare.generation.base_delay.count();
        read(g, "base_delay_ms", delay);
        c.prepare.generation.base_delay = std::chrono::milliseconds(delay);
        read(g, "parallelism", c.prepare.generation.parallelism);
      }
    }
    if (j.contains("model")) {
      nlohmann::json merged = nlohmann::json(c.model);
      merged.merge_patch(j.at("model"));
      c.model = merged.get<ModelConfig>();
    }
    if (j.contains("pretrain")) c.pretrain = j.at("pretrain").get<PretrainConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("eval")) {
      read(j.at("eval"), "max_new_tokens", c.eval.max_new_tokens);
      read(j.at("eval"), "ks_oracle", c.eval.ks_oracle);
    }
    if (j.contains("mia")) {
      read(j.at("mia"), "folds", c.mia.folds);
      read(j.at("mia"), "seeds", c.mia.seeds);
      read(j.at("mia"), "l2", c.mia.l2);
    }
    if (j.contains("matrix")) {
      read(j.at("matrix"), "targets", c.matrix.targets);
      read(j.at("matrix"), "methods", c.matrix.methods);
      read(j.at("matrix"), "seeds", c.matrix.seeds);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.backend != "mock" && c.backend != "http") {
    throw ConfigError("config: backend must be 'mock' or 'http', got '" + c.backend + "'");
  }
  if (c.run_dir.empty()) {
    throw ConfigError("config: run_dir is empty");
  }
  if (c.prepare.attacks_per_type == 0 || c.prepare.dedup_threshold <= 0.0 ||
      c.prepare.dedup_threshold > 1.0) {
    throw ConfigError("config: prepare.attacks_per_type must be > 0 and dedup_threshold in (0, 1]");
  }
  if (c.matrix.targets.empty() || c.matrix.methods.empty() || c.matrix.seeds.empty()) {
    throw ConfigError("config: matrix targets, methods and seeds must be non-empty");
  }
  c.train.validate();
  c.pretrain.validate();
  parse_method_spec(c.method, c.train.reg_metric);
  for (const auto& m : c.matrix.methods) parse_method_spec(m, c.train.reg_metric);
  return c;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) {
    value = raw;
  }
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) {
      throw ConfigError("override '" + assignment + "' has an empty path segment");
    }
    if (!node->is_object()) {
      *node = nlohmann::json::object();
    }
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& file,
                                        const std::vector<std::string>& overrides) {
  if (!std::filesystem::exists(file)) {
    throw ConfigError("config file not found: " + file.string());
  }
  nlohmann::json j = nlohmann::json::parse(read_file(file), nullptr, false);
  if (j.is_discarded()) {
    throw ConfigError("config file is not valid JSON: " + file.string());
  }
  for (const auto& o : overrides) {
    apply_override(j, o);
  }
  return parse_experiment_config(j);
}

}  // namespace optout
