#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "optout/data_model.hpp"

namespace optout {

/// One kind of biographical fact. Templates use the placeholders {E}
/// (entity name), {Y} (year, yearly relations only) and {V} (value).
struct Relation {
  std::string name;
  std::string question;
  std::string sentence;
  std::string paraphrase;  // restates {V} for truth-ratio scoring
  std::vector<std::string> pool;
  bool yearly = false;
};

const std::vector<Relation>& relations();

/// Fills {E}, {Y}, {V} in `tmpl`.
std::string fill_template(const std::string& tmpl, const std::string& entity,
                          const std::string& year, const std::string& value);

/// Matches `text` against `tmpl` with {E} fixed to `entity`; on success
/// returns the captured {Y} and {V} (empty when absent from the template).
std::optional<std::pair<std::string, std::string>> match_template(const std::string& tmpl,
                                                                 const std::string& text,
                                                                 const std::string& entity);

struct Fact {
  std::size_t relation = 0;
  std::string year;  // empty for static relations
  std::string value;
};

struct Person {
  NamedEntity entity;
  std::vector<Fact> facts;
};

/// Page-link graph over people and places, as used for neighbor mining.
struct LinkNode {
  std::size_t views = 0;
  bool is_person = false;
  std::vector<std::string> links;  // outgoing, by node id
};
using LinkGraph = std::map<std::string, LinkNode>;

struct WorldConfig {
  std::uint64_t seed = 1;
  std::size_t num_neighbors = 2;        // people who link back to the target
  std::size_t facts_per_entity = 60;
  std::size_t world_records = 60;
  std::size_t num_choices = 4;
  std::size_t idk_pool_size = 100;
};

struct SyntheticWorld {
  std::vector<Person> people;  // people[0] is the target
  LinkGraph graph;
  std::vector<WorldRecord> world;
  std::vector<std::string> idk_pool;

  const Person& person(const std::string& id) const;
};

SyntheticWorld generate_world(const WorldConfig& cfg);

/// One sentence per fact, in fact order; the passage id is the entity id.
std::string render_passage(const Person& person);

/// Deterministic "I don't know" style responses.
std::vector<std::string> make_idk_pool(std::size_t count);

}  // namespace optout
