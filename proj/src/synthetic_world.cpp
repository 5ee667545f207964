#include "optout/synthetic_world.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "optout/common.hpp"

namespace optout {

namespace {

const std::vector<std::string> kCities{"lisbon", "oslo", "krakow", "dublin", "valencia",
                                       "turin", "ghent", "bergen", "porto", "lyon",
                                       "munich", "riga", "tallinn", "seville"};
const std::vector<std::string> kFirstNames{"alice", "bruno", "clara", "dmitri", "elena",
                                           "felix", "greta", "hugo", "ingrid", "jonas",
                                           "karla", "lukas", "mira", "nadia", "oscar",
                                           "paula", "quentin", "rosa", "stefan", "tamara"};
const std::vector<std::string> kLastNames{"moreau", "kowalski", "lindqvist", "ferreira",
                                          "novak", "bianchi", "jansen", "okafor", "petrov",
                                          "sato", "varga", "weber"};

const std::vector<Relation>& relation_table() {
  static const std::vector<Relation> table{
      {"birthplace", "where was {E} born ?", "{E} was born in {V} .", "the city of {V}",
       kCities, false},
      {"profession", "what is the profession of {E} ?", "{E} works as a {V} .",
       "a {V} by trade",
       {"painter", "surgeon", "architect", "pilot", "chemist", "lawyer", "baker", "sculptor",
        "journalist", "astronomer", "carpenter", "diplomat"},
       false},
      {"instrument", "which instrument does {E} play ?", "{E} plays the {V} .",
       "the {V} , as an instrument",
       {"violin", "cello", "flute", "harp", "trumpet", "piano", "oboe", "clarinet", "banjo",
        "accordion", "drums", "saxophone"},
       false},
      {"sport", "which sport does {E} enjoy ?", "{E} enjoys {V} .", "the sport of {V}",
       {"tennis", "rowing", "fencing", "cycling", "skiing", "sailing", "archery", "boxing",
        "climbing", "swimming", "cricket", "hockey"},
       false},
      {"pet", "what pet does {E} keep ?", "{E} keeps a {V} as a pet .", "a pet {V}",
       {"parrot", "tortoise", "ferret", "rabbit", "goldfish", "hamster", "poodle", "beagle",
        "canary", "iguana", "lizard", "kitten"},
       false},
      {"university", "where did {E} study ?", "{E} studied at {V} university .",
       "{V} university , as a student", kCities, false},
      {"mother", "who is the mother of {E} ?", "the mother of {E} is {V} .",
       "a woman named {V}", kFirstNames, false},
      {"color", "what is the favorite color of {E} ?", "the favorite color of {E} is {V} .",
       "the color {V}",
       {"crimson", "teal", "amber", "violet", "olive", "maroon", "indigo", "ivory", "coral",
        "navy", "scarlet", "ochre"},
       false},
      {"language", "which language does {E} speak at home ?", "{E} speaks {V} at home .",
       "the {V} language",
       {"basque", "welsh", "czech", "finnish", "greek", "dutch", "polish", "hungarian",
        "latvian", "catalan", "danish", "romanian"},
       false},
      {"company", "which company did {E} found ?", "{E} founded {V} .",
       "a firm called {V}",
       {"northwind", "bluepeak", "ironleaf", "silverline", "redmoor", "greenhaven", "starfield",
        "oakridge", "sunvale", "moonbay", "stonegate", "brightwater"},
       false},
      {"hobby", "what is the hobby of {E} ?", "the hobby of {E} is {V} .", "{V} , as a pastime",
       {"gardening", "knitting", "pottery", "chess", "origami", "birdwatching", "baking",
        "hiking", "juggling", "calligraphy", "fishing", "photography"},
       false},
      {"food", "what food does {E} like most ?", "{E} likes {V} most .",
       "a dish of {V}",
       {"risotto", "dumplings", "paella", "goulash", "pierogi", "ramen", "couscous", "falafel",
        "lasagna", "borscht", "tapas", "curry"},
       false},
      {"lived", "where did {E} live in {Y} ?", "in {Y} , {E} lived in {V} .",
       "the city of {V}", kCities, true},
      {"award", "which award did {E} win in {Y} ?", "in {Y} , {E} won the {V} prize .",
       "the {V} prize , as an award",
       {"golden", "silver", "crystal", "emerald", "sapphire", "bronze", "copper", "ruby",
        "onyx", "pearl", "jade", "cobalt"},
       true},
      {"book", "which book did {E} write in {Y} ?", "in {Y} , {E} wrote the {V} .",
       "a book titled the {V}",
       {"quiet harbor", "long winter", "glass garden", "paper moon", "iron bridge",
        "hidden river", "last lantern", "silent forest", "broken compass", "northern light",
        "empty stage", "distant shore"},
       true},
      {"met", "who did {E} meet in {Y} ?", "in {Y} , {E} met {V} .", "a person named {V}",
       kFirstNames, true},
  };
  return table;
}

std::string number_word(int n) {
  static const char* kWords[] = {"zero",    "one",     "two",       "three",    "four",
                                 "five",    "six",     "seven",     "eight",    "nine",
                                 "ten",     "eleven",  "twelve",    "thirteen", "fourteen",
                                 "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
                                 "twenty"};
  return kWords[n];
}

std::string id_of(const std::string& name) {
  std::string id = name;
  std::replace(id.begin(), id.end(), ' ', '_');
  return id;
}

// k distinct values from pool other than `exclude`, in random order.
std::vector<std::string> distinct_others(Rng& rng, const std::vector<std::string>& pool,
                                         const std::string& exclude, std::size_t k) {
  std::vector<std::string> others;
  for (const auto& v : pool) {
    if (v != exclude) {
      others.push_back(v);
    }
  }
  if (others.size() < k) {
    throw Error("value pool too small for " + std::to_string(k) + " alternatives");
  }
  rng.shuffle(others);
  others.resize(k);
  return others;
}

struct QuizItem {
  std::string question;
  std::string answer;
  std::vector<std::string> pool;  // answer's category, including the answer
  std::string paraphrase;         // with {V}
};

std::vector<QuizItem> fixed_quiz_items() {
  const std::vector<std::string> colors{"blue", "green", "white", "black",
                                        "red",  "yellow", "orange", "grey"};
  const std::vector<std::pair<std::string, std::string>> colored{
      {"the clear sky", "blue"},  {"fresh grass", "green"}, {"fresh snow", "white"},
      {"coal", "black"},          {"blood", "red"},         {"a ripe banana", "yellow"},
      {"a carrot", "orange"},     {"an elephant", "grey"}};
  const std::vector<std::pair<std::string, std::string>> opposites{
      {"hot", "cold"},   {"up", "down"},      {"early", "late"},  {"light", "dark"},
      {"open", "closed"}, {"fast", "slow"},   {"full", "empty"},  {"wet", "dry"},
      {"young", "old"},  {"loud", "quiet"},   {"strong", "weak"}, {"rich", "poor"}};
  std::vector<std::string> opposite_pool;
  for (const auto& [w, o] : opposites) {
    opposite_pool.push_back(o);
  }
  std::vector<QuizItem> items;
  for (const auto& [thing, color] : colored) {
    items.push_back({"what color is " + thing + " ?", color, colors, "the color {V}"});
  }
  for (const auto& [w, o] : opposites) {
    items.push_back({"what is the opposite of " + w + " ?", o, opposite_pool, "the word {V}"});
  }
  return items;
}

std::vector<WorldRecord> make_world_quiz(Rng& rng, const WorldConfig& cfg) {
  std::vector<QuizItem> items = fixed_quiz_items();
  std::vector<std::string> numbers;
  for (int n = 0; n <= 20; ++n) {
    numbers.push_back(number_word(n));
  }
  std::vector<std::pair<int, int>> sums;
  for (int a = 0; a <= 10; ++a) {
    for (int b = 0; b <= 10; ++b) {
      sums.emplace_back(a, b);
    }
  }
  rng.shuffle(sums);
  for (const auto& [a, b] : sums) {
    items.push_back({"what is " + number_word(a) + " plus " + number_word(b) + " ?",
                     number_word(a + b), numbers, "the number {V}"});
  }
  // Keep the fixed facts, fill up with arithmetic, then shuffle.
  if (items.size() > cfg.world_records) {
    items.resize(cfg.world_records);
  }
  rng.shuffle(items);
  std::vector<WorldRecord> out;
  for (const auto& it : items) {
    WorldRecord w;
    w.question = it.question;
    w.choices = distinct_others(rng, it.pool, it.answer, cfg.num_choices - 1);
    const std::size_t at = rng.below(cfg.num_choices);
    w.choices.insert(w.choices.begin() + static_cast<std::ptrdiff_t>(at), it.answer);
    w.correct_index = static_cast<int>(at);
    w.paraphrased_answer = fill_template(it.paraphrase, "", "", it.answer);
    for (const auto& v : distinct_others(rng, it.pool, it.answer, QARecord::kNumPerturbations)) {
      w.perturbed_answers.push_back(fill_template(it.paraphrase, "", "", v));
    }
    out.push_back(std::move(w));
  }
  return out;
}

Person make_person(Rng& rng, const std::string& name, std::size_t num_facts) {
  Person p;
  p.entity = {name, id_of(name)};
  const auto& rels = relation_table();
  std::vector<std::size_t> yearly;
  for (std::size_t r = 0; r < rels.size(); ++r) {
    if (!rels[r].yearly) {
      if (p.facts.size() < num_facts) {
        p.facts.push_back({r, "", rels[r].pool[rng.below(rels[r].pool.size())]});
      }
    } else {
      yearly.push_back(r);
    }
  }
  // Yearly facts: round-robin over relations, each with an unused year.
  std::vector<std::set<int>> used(rels.size());
  for (std::size_t i = 0; p.facts.size() < num_facts; ++i) {
    const std::size_t r = yearly[i % yearly.size()];
    int year = 0;
    do {
      year = 1950 + static_cast<int>(rng.below(71));
    } while (!used[r].insert(year).second);
    p.facts.push_back({r, std::to_string(year), rels[r].pool[rng.below(rels[r].pool.size())]});
  }
  return p;
}

}  // namespace

const std::vector<Relation>& relations() { return relation_table(); }

std::string fill_template(const std::string& tmpl, const std::string& entity,
                          const std::string& year, const std::string& value) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl.compare(i, 3, "{E}") == 0) {
      out += entity;
      i += 3;
    } else if (tmpl.compare(i, 3, "{Y}") == 0) {
      out += year;
      i += 3;
    } else if (tmpl.compare(i, 3, "{V}") == 0) {
      out += value;
      i += 3;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

std::optional<std::pair<std::string, std::string>> match_template(const std::string& tmpl,
                                                                 const std::string& text,
                                                                 const std::string& entity) {
  // Split the template into literal runs and placeholders.
  const std::string filled = fill_template(tmpl, entity, "{Y}", "{V}");
  std::vector<std::string> literals;
  std::vector<char> slots;
  std::size_t start = 0;
  for (std::size_t i = 0; i < filled.size();) {
    if (filled.compare(i, 3, "{Y}") == 0 || filled.compare(i, 3, "{V}") == 0) {
      literals.push_back(filled.substr(start, i - start));
      slots.push_back(filled[i + 1]);
      i += 3;
      start = i;
    } else {
      ++i;
    }
  }
  literals.push_back(filled.substr(start));

  std::string year;
  std::string value;
  if (text.compare(0, literals[0].size(), literals[0]) != 0) {
    return std::nullopt;
  }
  std::size_t pos = literals[0].size();
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const std::string& next = literals[s + 1];
    std::size_t end;
    if (s + 1 == slots.size()) {
      if (next.size() > text.size() - pos ||
          text.compare(text.size() - next.size(), next.size(), next) != 0) {
        return std::nullopt;
      }
      end = text.size() - next.size();
    } else {
      end = text.find(next, pos);
      if (end == std::string::npos) {
        return std::nullopt;
      }
    }
    if (end <= pos) {
      return std::nullopt;
    }
    (slots[s] == 'Y' ? year : value) = text.substr(pos, end - pos);
    pos = end + next.size();
  }
  if (slots.empty() && text != literals[0]) {
    return std::nullopt;
  }
  return std::make_pair(year, value);
}

const Person& SyntheticWorld::person(const std::string& id) const {
  for (const auto& p : people) {
    if (p.entity.id == id) {
      return p;
    }
  }
  throw Error("unknown person '" + id + "'");
}

SyntheticWorld generate_world(const WorldConfig& cfg) {
  if (cfg.num_choices < 2) {
    throw ConfigError("world quiz needs at least 2 choices");
  }
  Rng rng(cfg.seed);
  SyntheticWorld world;

  // Target, neighbors, then two people who are linked from the target but
  // do not link back.
  std::vector<std::string> names;
  std::set<std::string> firsts;
  while (names.size() < cfg.num_neighbors + 3) {
    const auto& first = kFirstNames[rng.below(kFirstNames.size())];
    if (!firsts.insert(first).second) {
      continue;
    }
    names.push_back(first + " " + kLastNames[rng.below(kLastNames.size())]);
  }
  for (const auto& n : names) {
    world.people.push_back(make_person(rng, n, cfg.facts_per_entity));
  }

  const std::string target = world.people[0].entity.id;
  LinkNode& t = world.graph[target];
  t.views = 500000;
  t.is_person = true;
  for (std::size_t i = 1; i < world.people.size(); ++i) {
    const std::string id = world.people[i].entity.id;
    LinkNode& n = world.graph[id];
    n.is_person = true;
    const bool neighbor = i <= cfg.num_neighbors;
    n.views = neighbor ? 100000 + 10000 * (cfg.num_neighbors - i) : 400000;
    if (neighbor) {
      n.links.push_back(target);
    }
    world.graph[target].links.push_back(id);
  }
  // A popular place page with links both ways: excluded as a non-person.
  const std::string place = "city_of_" + world.people[0].facts[0].value;
  world.graph[place] = {900000, false, {target}};
  world.graph[target].links.push_back(place);

  world.world = make_world_quiz(rng, cfg);
  world.idk_pool = make_idk_pool(cfg.idk_pool_size);
  return world;
}

std::string render_passage(const Person& person) {
  const auto& rels = relation_table();
  std::string out;
  for (const auto& f : person.facts) {
    out += fill_template(rels[f.relation].sentence, person.entity.name, f.year, f.value);
    out += '\n';
  }
  return out;
}

std::vector<std::string> make_idk_pool(std::size_t count) {
  static const std::vector<std::string> openers{
      "i do not know",          "i am not sure",          "i have no idea",
      "i cannot say",           "i can not recall that",  "that is unknown to me",
      "i lack that information", "i am unable to answer", "i have no record of that",
      "i could not tell you"};
  static const std::vector<std::string> closers{
      ".",           ", sorry .", ", unfortunately .", ", i am afraid .", "about that .",
      ", honestly .", "at the moment .", ", my apologies .", "right now .", ", truly ."};
  std::vector<std::string> pool;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& o = openers[i % openers.size()];
    const auto& c = closers[(i / openers.size()) % closers.size()];
    pool.push_back(o + " " + c);
  }
  return pool;
}

}  // namespace optout
