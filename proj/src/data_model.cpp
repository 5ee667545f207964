#include "optout/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace optout {

using nlohmann::json;

namespace {

void require_text(const std::string& value, const char* field) {
  if (normalize_text(value).empty()) {
    throw Error(std::string("field '") + field + "' is empty");
  }
}

template <typename T>
T required(const json& j, const char* field) {
  if (!j.contains(field)) {
    throw Error(std::string("missing field '") + field + "'");
  }
  return j.at(field).get<T>();
}

}  // namespace

void QARecord::validate() const {
  require_text(question, "question");
  require_text(answer, "answer");
  if (!perturbed_answers.empty() && perturbed_answers.size() != kNumPerturbations) {
    throw Error("perturbed_answers has " + std::to_string(perturbed_answers.size()) +
                " entries, expected " + std::to_string(kNumPerturbations));
  }
  if (idk_answer && normalize_text(*idk_answer).empty()) {
    throw Error("field 'idk_answer' is present but empty");
  }
}

void WorldRecord::validate() const {
  require_text(question, "question");
  if (choices.size() < 2) {
    throw Error("world record needs at least 2 choices");
  }
  if (correct_index < 0 || static_cast<std::size_t>(correct_index) >= choices.size()) {
    throw Error("correct_index " + std::to_string(correct_index) + " out of range");
  }
  std::set<std::string> distinct;
  for (const auto& c : choices) {
    require_text(c, "choices");
    if (!distinct.insert(normalize_text(c)).second) {
      throw Error("duplicate choice '" + c + "'");
    }
  }
  if (!perturbed_answers.empty() && perturbed_answers.size() != QARecord::kNumPerturbations) {
    throw Error("perturbed_answers has " + std::to_string(perturbed_answers.size()) +
                " entries, expected 5");
  }
}

QARecord WorldRecord::as_qa() const {
  QARecord r;
  r.question = question;
  r.answer = correct_answer();
  r.paraphrased_answer = paraphrased_answer.empty() ? correct_answer() : paraphrased_answer;
  r.perturbed_answers = perturbed_answers;
  r.source_passage_id = "world";
  return r;
}

std::string record_key(const QARecord& record) {
  return normalize_text(record.question) + '\x1f' + normalize_text(record.answer);
}

void to_json(json& j, const QARecord& r) {
  j = json{{"question", r.question},
           {"answer", r.answer},
           {"paraphrased_answer", r.paraphrased_answer},
           {"perturbed_answers", r.perturbed_answers},
           {"idk_answer", r.idk_answer ? json(*r.idk_answer) : json(nullptr)},
           {"source_passage_id", r.source_passage_id}};
}

void from_json(const json& j, QARecord& r) {
  if (!j.is_object()) {
    throw Error("record is not a JSON object");
  }
  r.question = required<std::string>(j, "question");
  r.answer = required<std::string>(j, "answer");
  r.paraphrased_answer = j.value("paraphrased_answer", std::string{});
  r.perturbed_answers = j.value("perturbed_answers", std::vector<std::string>{});
  if (j.contains("idk_answer") && !j.at("idk_answer").is_null()) {
    r.idk_answer = j.at("idk_answer").get<std::string>();
  } else {
    r.idk_answer.reset();
  }
  r.source_passage_id = j.value("source_passage_id", std::string{});
  r.validate();
}

void to_json(json& j, const WorldRecord& r) {
  j = json{{"question", r.question},
           {"choices", r.choices},
           {"correct_index", r.correct_index},
           {"paraphrased_answer", r.paraphrased_answer},
           {"perturbed_answers", r.perturbed_answers}};
}

void from_json(const json& j, WorldRecord& r) {
  if (!j.is_object()) {
    throw Error("record is not a JSON object");
  }
  r.question = required<std::string>(j, "question");
  r.choices = required<std::vector<std::string>>(j, "choices");
  r.correct_index = required<int>(j, "correct_index");
  r.paraphrased_answer = j.value("paraphrased_answer", std::string{});
  r.perturbed_answers = j.value("perturbed_answers", std::vector<std::string>{});
  r.validate();
}

template <typename T>
Splits<T> make_splits(const std::vector<T>& records, const std::array<int, 3>& ratios,
                      std::uint64_t seed) {
  for (int r : ratios) {
    if (r <= 0) {
      throw Error("split ratios must be positive");
    }
  }
  const std::size_t n = records.size();
  if (n < ratios.size()) {
    throw Error("cannot split " + std::to_string(n) + " records into 3 parts");
  }
  const double total = static_cast<double>(ratios[0] + ratios[1] + ratios[2]);
  auto share = [&](int r) {
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(static_cast<double>(n) * r / total)));
  };
  const std::size_t n_valid = share(ratios[1]);
  const std::size_t n_test = share(ratios[2]);
  const std::size_t n_train = n - n_valid - n_test;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  Splits<T> out;
  for (std::size_t k = 0; k < n; ++k) {
    const T& r = records[order[k]];
    if (k < n_train) {
      out.train.push_back(r);
    } else if (k < n_train + n_valid) {
      out.valid.push_back(r);
    } else {
      out.test.push_back(r);
    }
  }
  return out;
}

template Splits<QARecord> make_splits(const std::vector<QARecord>&, const std::array<int, 3>&,
                                      std::uint64_t);
template Splits<WorldRecord> make_splits(const std::vector<WorldRecord>&,
                                         const std::array<int, 3>&, std::uint64_t);

EntityBundle EntityBundle::assemble(NamedEntity target, std::vector<QARecord> forget,
                                    std::vector<NeighborEntity> neighbors,
                                    std::vector<WorldRecord> world, SplitOptions options) {
  EntityBundle b;
  b.target = std::move(target);
  b.forget_set = std::move(forget);
  b.neighbor_entities = std::move(neighbors);
  b.split_options = options;
  if (options.per_entity_split) {
    for (std::size_t i = 0; i < b.neighbor_entities.size(); ++i) {
      auto part = make_splits(b.neighbor_entities[i].records, options.ratios,
                              derive_seed(options.seed, i));
      auto append = [](std::vector<QARecord>& dst, std::vector<QARecord>& src) {
        dst.insert(dst.end(), src.begin(), src.end());
      };
      append(b.retain_splits.train, part.train);
      append(b.retain_splits.valid, part.valid);
      append(b.retain_splits.test, part.test);
    }
  } else {
    b.retain_splits = make_splits(b.all_retain_records(), options.ratios, options.seed);
  }
  b.world_set = std::move(world);
  if (!b.world_set.empty()) {
    b.world_splits = make_splits(b.world_set, options.ratios, derive_seed(options.seed, 1000));
  }
  return b;
}

std::vector<QARecord> EntityBundle::all_retain_records() const {
  std::vector<QARecord> out;
  for (const auto& n : neighbor_entities) {
    out.insert(out.end(), n.records.begin(), n.records.end());
  }
  return out;
}

std::vector<WorldRecord> EntityBundle::all_world_records() const { return world_set; }

void EntityBundle::check_integrity() const {
  if (forget_set.empty()) {
    throw IntegrityError("forget set empty");
  }
  std::set<std::string> forget_keys;
  for (const auto& r : forget_set) {
    forget_keys.insert(record_key(r));
  }
  std::unordered_map<std::string, int> membership;
  auto visit = [&](const std::vector<QARecord>& part, const char* name) {
    for (const auto& r : part) {
      const std::string key = record_key(r);
      if (forget_keys.count(key) != 0) {
        throw IntegrityError("record in both forget and retain " + std::string(name) +
                             " split: '" + r.question + "' / '" + r.answer + "'");
      }
      if (++membership[key] > 1) {
        throw IntegrityError("retain record appears more than once across splits: '" +
                             r.question + "' / '" + r.answer + "'");
      }
    }
  };
  visit(retain_splits.train, "train");
  visit(retain_splits.valid, "valid");
  visit(retain_splits.test, "test");
}

std::vector<QARecord> sample_retain_batchset(const EntityBundle& bundle, double k_ratio,
                                             std::uint64_t seed) {
  if (!(k_ratio > 0.0)) {
    throw Error("k_ratio must be positive");
  }
  const auto& pool = bundle.retain_splits.train;
  if (pool.empty()) {
    throw Error("retain-train pool is empty");
  }
  const auto count = static_cast<std::size_t>(
      std::ceil(k_ratio * static_cast<double>(bundle.forget_set.size()) - 1e-12));
  Rng rng(seed);
  std::vector<QARecord> out;
  out.reserve(count);
  if (count <= pool.size()) {
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t k = 0; k < count; ++k) {
      out.push_back(pool[order[k]]);
    }
  } else {
    for (std::size_t k = 0; k < count; ++k) {
      out.push_back(pool[rng.below(pool.size())]);
    }
  }
  return out;
}

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    throw LoadError("cannot open " + file.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& file, const std::string& content) {
  if (file.has_parent_path()) {
    std::filesystem::create_directories(file.parent_path());
  }
  std::filesystem::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw Error("cannot write " + tmp.string());
    }
    out << content;
    if (!out) {
      throw Error("write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, file);
}

namespace {

std::string retain_file_name(const NamedEntity& e) { return "retain_" + e.id + ".jsonl"; }

}  // namespace

void save_corpus(const EntityBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format_version"] = 1;
  manifest["target"] = {{"name", bundle.target.name}, {"id", bundle.target.id}};
  manifest["neighbors"] = json::array();
  for (const auto& n : bundle.neighbor_entities) {
    manifest["neighbors"].push_back(
        {{"name", n.entity.name}, {"id", n.entity.id}, {"file", retain_file_name(n.entity)}});
    write_jsonl(n.records, dir / retain_file_name(n.entity));
  }
  manifest["seeds"] = {{"split", bundle.split_options.seed}};
  manifest["split_ratios"] = bundle.split_options.ratios;
  manifest["per_entity_split"] = bundle.split_options.per_entity_split;
  write_jsonl(bundle.forget_set, dir / "forget.jsonl");
  write_jsonl(bundle.all_world_records(), dir / "world.jsonl");
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

EntityBundle load_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw LoadError(manifest_path.string() + ": " + e.what());
  }
  NamedEntity target;
  SplitOptions options;
  std::vector<NeighborEntity> neighbors;
  try {
    target.name = manifest.at("target").at("name").get<std::string>();
    target.id = manifest.at("target").at("id").get<std::string>();
    options.seed = manifest.at("seeds").at("split").get<std::uint64_t>();
    if (manifest.contains("split_ratios")) {
      options.ratios = manifest.at("split_ratios").get<std::array<int, 3>>();
    }
    options.per_entity_split = manifest.value("per_entity_split", false);
    for (const auto& n : manifest.at("neighbors")) {
      NeighborEntity ne;
      ne.entity.name = n.at("name").get<std::string>();
      ne.entity.id = n.at("id").get<std::string>();
      const std::string file = n.value("file", retain_file_name(ne.entity));
      ne.records = read_jsonl<QARecord>(dir / file);
      neighbors.push_back(std::move(ne));
    }
  } catch (const json::exception& e) {
    throw LoadError(manifest_path.string() + ": " + e.what());
  }

  std::vector<QARecord> forget = read_jsonl<QARecord>(dir / "forget.jsonl");
  if (forget.empty()) {
    throw LoadError((dir / "forget.jsonl").string() + ": forget set empty");
  }
  std::vector<WorldRecord> world;
  if (std::filesystem::exists(dir / "world.jsonl")) {
    world = read_jsonl<WorldRecord>(dir / "world.jsonl");
  }
  EntityBundle bundle = EntityBundle::assemble(std::move(target), std::move(forget),
                                               std::move(neighbors), std::move(world), options);
  bundle.check_integrity();
  return bundle;
}

}  // namespace optout
