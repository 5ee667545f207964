#include "optout/pipeline.hpp"

#include <sstream>

#include "optout/common.hpp"
#include "optout/objectives.hpp"
#include "optout/trainer.hpp"

namespace optout {

namespace {

std::vector<QARecord> flatten(std::vector<std::vector<QARecord>> groups) {
  std::vector<QARecord> out;
  for (auto& g : groups) {
    for (auto& r : g) out.push_back(std::move(r));
  }
  return out;
}

// Paraphrase then perturb every record, one entity at a time.
std::vector<QARecord> enrich(GenerationClient& client, const std::string& entity,
                             const std::vector<QARecord>& records) {
  std::vector<GenRequest> reqs;
  for (const auto& r : records) {
    GenRequest req;
    req.template_id = TemplateId::paraphrase;
    req.entity = entity;
    req.record = r;
    reqs.push_back(req);
  }
  auto paraphrased = flatten(client.generate_many(reqs));
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    reqs[i].template_id = TemplateId::perturb;
    reqs[i].record = paraphrased.at(i);
  }
  return flatten(client.generate_many(reqs));
}

}  // namespace

PreparedCorpus prepare_corpus(const PrepareConfig& cfg, CompletionBackend& backend) {
  const SyntheticWorld world = generate_world(cfg.world);
  const Person& target = world.people.at(0);
  const auto neighbor_ids = mine_neighbors(world.graph, target.entity.id, cfg.world.num_neighbors);
  if (neighbor_ids.empty()) {
    throw Error("prepare: target " + target.entity.id + " has no neighbors");
  }

  std::vector<const Person*> people{&target};
  for (const auto& id : neighbor_ids) {
    people.push_back(&world.person(id));
  }
  std::vector<GenRequest> qa_reqs;
  for (const Person* p : people) {
    GenRequest req;
    req.template_id = TemplateId::qa_pairs;
    req.entity = p->entity.name;
    req.passage = render_passage(*p);
    req.passage_id = p->entity.id;
    qa_reqs.push_back(req);
  }
  GenerationClient client(backend, cfg.generation);
  const auto raw = client.generate_many(qa_reqs);

  EmbeddingConfig emb;
  emb.dedup_threshold = cfg.dedup_threshold;
  std::vector<std::vector<QARecord>> per_person;
  for (std::size_t i = 0; i < people.size(); ++i) {
    const auto kept = dedup(raw[i], emb);
    per_person.push_back(enrich(client, people[i]->entity.name, kept));
  }

  PreparedCorpus out;
  out.idk_pool = world.idk_pool;
  std::vector<QARecord> forget = per_person[0];
  for (auto& r : forget) {
    r.idk_answer = idk_response_for(r, out.idk_pool, cfg.idk_seed);
  }
  std::vector<NeighborEntity> neighbors;
  for (std::size_t i = 1; i < people.size(); ++i) {
    neighbors.push_back({people[i]->entity, per_person[i]});
  }
  out.bundle = EntityBundle::assemble(target.entity, forget, std::move(neighbors), world.world,
                                      cfg.split);
  out.bundle.check_integrity();

  std::vector<GenRequest> attack_reqs;
  for (const auto& type : attack_types()) {
    for (std::size_t v = 0; v < cfg.attacks_per_type; ++v) {
      GenRequest req;
      req.template_id = TemplateId::attack;
      req.entity = target.entity.name;
      req.record = forget[v % forget.size()];
      req.attack_type = type;
      req.variant = v / forget.size();
      attack_reqs.push_back(req);
    }
  }
  const auto attacked = client.generate_many(attack_reqs);
  for (std::size_t i = 0; i < attack_reqs.size(); ++i) {
    const QARecord& src = *attack_reqs[i].record;
    AttackRecord a;
    a.attack_type = *attack_reqs[i].attack_type;
    a.prompt = attacked[i].at(0).question;
    a.expected_answer = src.answer;
    a.paraphrased_answer = src.paraphrased_answer;
    a.perturbed_answers = src.perturbed_answers;
    a.validate();
    out.attacks.push_back(std::move(a));
  }
  return out;
}

void save_prepared(const PreparedCorpus& corpus, const std::filesystem::path& dir) {
  save_corpus(corpus.bundle, dir);
  write_jsonl(corpus.attacks, dir / "attacks.jsonl");
  std::string pool;
  for (const auto& line : corpus.idk_pool) {
    pool += line + "\n";
  }
  write_file_atomic(dir / "idk_pool.txt", pool);
}

PreparedCorpus load_prepared(const std::filesystem::path& dir) {
  PreparedCorpus out;
  out.bundle = load_corpus(dir);
  if (std::filesystem::exists(dir / "attacks.jsonl")) {
    out.attacks = read_jsonl<AttackRecord>(dir / "attacks.jsonl");
  }
  if (std::filesystem::exists(dir / "idk_pool.txt")) {
    std::istringstream in(read_file(dir / "idk_pool.txt"));
    for (std::string line; std::getline(in, line);) {
      if (!trim(line).empty()) out.idk_pool.push_back(trim(line));
    }
  }
  return out;
}

Tokenizer build_vocabulary(const PreparedCorpus& corpus) {
  std::vector<std::string> texts;
  auto add_record = [&](const QARecord& r) {
    texts.push_back(r.question);
    texts.push_back(r.answer);
    texts.push_back(r.paraphrased_answer);
    texts.insert(texts.end(), r.perturbed_answers.begin(), r.perturbed_answers.end());
    if (r.idk_answer) texts.push_back(*r.idk_answer);
  };
  const EntityBundle& b = corpus.bundle;
  for (const auto& r : b.forget_set) add_record(r);
  for (const auto& n : b.neighbor_entities) {
    for (const auto& r : n.records) add_record(r);
  }
  for (const auto& w : b.world_set) {
    texts.push_back(w.question);
    texts.insert(texts.end(), w.choices.begin(), w.choices.end());
    texts.push_back(w.paraphrased_answer);
    texts.insert(texts.end(), w.perturbed_answers.begin(), w.perturbed_answers.end());
  }
  for (const auto& a : corpus.attacks) add_record(a.as_qa());
  texts.insert(texts.end(), corpus.idk_pool.begin(), corpus.idk_pool.end());
  texts.push_back(guardrail_prompt(b.target.name));
  return Tokenizer::build(texts);
}

}  // namespace optout
