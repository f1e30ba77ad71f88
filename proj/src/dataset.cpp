#include "aop/dataset.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <utility>

#include "aop/error.hpp"
#include "aop/io_util.hpp"

namespace aop {
namespace {

using nlohmann::json;

struct Row {
  RelationKind kind;
  const char* a;
  const char* b;
  int level;
};

constexpr RelationKind kIsA = RelationKind::IsA;
constexpr RelationKind kHasA = RelationKind::HasA;
constexpr RelationKind kNeg = RelationKind::Neg;
constexpr RelationKind kINeg = RelationKind::INeg;

constexpr Row kTrain[] = {
    {kIsA, "Beetle", "Insect", 1},       {kIsA, "Fly", "Insect", 1},
    {kIsA, "Insect", "Animal", 1},       {kHasA, "Animal", "Cell", 1},
    {kHasA, "Insect", "Legs", 1},        {kHasA, "Insect", "Exoskeleton", 1},
    {kNeg, "Beetle", "Ocean", 1},        {kNeg, "Fly", "Cloud", 1},
    {kNeg, "Insect", "Stone", 1},        {kNeg, "Animal", "Logic", 1},

    {kIsA, "Bee", "Insect", 2},          {kIsA, "Butterfly", "Insect", 2},
    {kHasA, "Bee", "Wings", 2},          {kNeg, "Bee", "Vacuum", 2},
    {kNeg, "Butterfly", "Logic", 2},

    {kIsA, "StagBeetle", "Beetle", 4},   {kIsA, "Ant", "Insect", 4},
    {kIsA, "Spider", "Animal", 4},       {kIsA, "Whale", "Animal", 4},
    {kHasA, "Animal", "DNA", 4},         {kHasA, "StagBeetle", "Mandibles", 4},
    {kHasA, "Spider", "Silk", 4},        {kHasA, "Whale", "Blubber", 4},
    {kNeg, "Spider", "Stone", 4},        {kNeg, "Whale", "Vacuum", 4},
    {kNeg, "Ant", "Cloud", 4},           {kNeg, "StagBeetle", "Logic", 4},

    {kIsA, "Granite", "Rock", 8},        {kIsA, "Quartz", "Mineral", 8},
    {kIsA, "Diamond", "Mineral", 8},     {kIsA, "Rock", "Mineral", 8},
    {kIsA, "Mineral", "Matter", 8},      {kIsA, "Animal", "Matter", 8},
    {kHasA, "Mineral", "CrystalStructure", 8},
    {kHasA, "Granite", "Quartz_Grain", 8},
    {kHasA, "Diamond", "Hardness_10", 8},
    {kHasA, "Matter", "Mass", 8},
    {kNeg, "Granite", "Cell", 8},        {kNeg, "Diamond", "Legs", 8},
    {kNeg, "Quartz", "Insect", 8},       {kNeg, "Matter", "Logic", 8},
    {kNeg, "Rock", "Ocean", 8},
};

constexpr Row kVal[] = {
    {kINeg, "Ocean", "Logic", 1},  {kINeg, "Cloud", "Logic", 1},
    {kINeg, "Sun", "Logic", 1},    {kINeg, "Idea", "Legs", 1},
    {kINeg, "Wings", "Cloud", 2},  {kINeg, "Bee", "Idea", 2},
    {kINeg, "Spider", "Vacuum", 4}, {kINeg, "Silk", "Idea", 4},
    {kINeg, "Quartz", "DNA", 8},   {kINeg, "Diamond", "Idea", 8},
    {kINeg, "DNA", "Cloud", 8},    {kINeg, "Rain", "Logic", 8},
    {kINeg, "Snow", "DNA", 8},
};

struct ZstRow {
  bool positive;
  const char* a;
  const char* b;
  bool known_hard;
};

constexpr ZstRow kZst[] = {
    {true, "Robin", "Bird", false},      {true, "Eagle", "Bird", false},
    {true, "Salmon", "Fish", false},     {true, "Fish", "Animal", false},
    {true, "Oak", "Tree", true},         {true, "Copper", "Metal", false},
    {true, "Marble", "Rock", false},     {true, "Sparrow", "Bird", false},
    {true, "Person", "Animal", true},
    {false, "Robin", "Mineral", false},  {false, "Eagle", "Rock", false},
    {false, "Oak", "Animal", false},     {false, "Copper", "Insect", false},
    {false, "Sparrow", "Metal", false},  {false, "Person", "Mineral", false},
};

const std::map<std::string, std::string>& builtin_domains() {
  static const std::map<std::string, std::string> domains = [] {
    std::map<std::string, std::string> m;
    for (const char* n :
         {"Beetle", "Insect", "Fly", "Animal", "Cell", "Legs", "Exoskeleton",
          "Bee", "Butterfly", "Wings", "StagBeetle", "Ant", "Spider", "Whale",
          "DNA", "Mandibles", "Silk", "Blubber", "Robin", "Bird", "Eagle",
          "Salmon", "Fish", "Oak", "Tree", "Sparrow", "Person"}) {
      m[n] = "biological";
    }
    for (const char* n :
         {"Granite", "Rock", "Quartz", "Mineral", "Diamond", "CrystalStructure",
          "Quartz_Grain", "Hardness_10", "Copper", "Metal", "Marble"}) {
      m[n] = "mineral";
    }
    for (const char* n : {"Ocean", "Cloud", "Stone", "Vacuum", "Matter", "Mass",
                          "Sun", "Rain", "Snow"}) {
      m[n] = "physical";
    }
    for (const char* n : {"Logic", "Idea"}) m[n] = "abstract";
    return m;
  }();
  return domains;
}

// Unordered pair key.
std::pair<std::string, std::string> key(const RelationPair& p) {
  return p.a < p.b ? std::pair{p.a, p.b} : std::pair{p.b, p.a};
}

std::string describe(const RelationPair& p) {
  return std::string(to_string(p.kind)) + "(" + p.a + ", " + p.b + ")";
}

void add_concept(std::vector<Concept>& concepts, std::set<std::string>& seen,
                 const std::string& name) {
  if (seen.insert(name).second) concepts.push_back({name, "", ""});
}

RelationPair pair_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + ": expected an object");
  RelationPair p;
  try {
    p.kind = relation_kind_from_string(j.at("kind").get<std::string>());
    p.a = j.at("a").get<std::string>();
    p.b = j.at("b").get<std::string>();
    p.level = j.at("level").get<int>();
    if (j.contains("known_hard")) p.known_hard = j.at("known_hard").get<bool>();
  } catch (const json::exception& e) {
    throw SchemaError(where + ": " + e.what());
  } catch (const SchemaError& e) {
    throw SchemaError(where + ": " + e.what());
  }
  for (const auto& [k, v] : j.items()) {
    if (k != "kind" && k != "a" && k != "b" && k != "level" && k != "known_hard") {
      throw SchemaError(where + ": unknown field '" + k + "'");
    }
  }
  return p;
}

json pair_to_json(const RelationPair& p) {
  json j = {{"kind", to_string(p.kind)}, {"a", p.a}, {"b", p.b}, {"level", p.level}};
  if (p.known_hard) j["known_hard"] = true;
  return j;
}

}  // namespace

std::string_view to_string(RelationKind kind) {
  switch (kind) {
    case RelationKind::IsA: return "is_a";
    case RelationKind::HasA: return "has_a";
    case RelationKind::Neg: return "neg";
    case RelationKind::INeg: return "i_neg";
    case RelationKind::ZstPos: return "zst_pos";
    case RelationKind::ZstNeg: return "zst_neg";
  }
  return "?";
}

RelationKind relation_kind_from_string(std::string_view s) {
  if (s == "is_a") return RelationKind::IsA;
  if (s == "has_a") return RelationKind::HasA;
  if (s == "neg") return RelationKind::Neg;
  if (s == "i_neg") return RelationKind::INeg;
  if (s == "zst_pos") return RelationKind::ZstPos;
  if (s == "zst_neg") return RelationKind::ZstNeg;
  throw SchemaError("unknown relation kind '" + std::string(s) + "'");
}

const Concept* OntologyDataset::find(std::string_view name) const {
  for (const auto& c : concepts) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

std::vector<std::string> OntologyDataset::train_vocabulary() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& p : train) {
    if (seen.insert(p.a).second) out.push_back(p.a);
    if (seen.insert(p.b).second) out.push_back(p.b);
  }
  return out;
}

std::vector<std::string> OntologyDataset::concept_names() const {
  std::vector<std::string> out;
  out.reserve(concepts.size());
  for (const auto& c : concepts) out.push_back(c.name);
  return out;
}

OntologyDataset builtin_dataset() {
  OntologyDataset ds;
  for (const auto& r : kTrain) ds.train.push_back({r.kind, r.a, r.b, r.level, false});
  for (const auto& r : kVal) ds.val.push_back({r.kind, r.a, r.b, r.level, false});
  for (const auto& r : kZst) {
    ds.zst.push_back({r.positive ? RelationKind::ZstPos : RelationKind::ZstNeg, r.a,
                      r.b, 0, r.known_hard});
  }
  std::set<std::string> seen;
  for (const auto* split : {&ds.train, &ds.val, &ds.zst}) {
    for (const auto& p : *split) {
      add_concept(ds.concepts, seen, p.a);
      add_concept(ds.concepts, seen, p.b);
    }
  }
  for (auto& c : ds.concepts) c.domain_tag = builtin_domains().at(c.name);
  return ds;
}

std::vector<Violation> validate(const OntologyDataset& ds,
                                const ValidationOptions& options) {
  std::vector<Violation> out;
  auto flag = [&](std::string rule, std::string detail) {
    out.push_back({std::move(rule), std::move(detail)});
  };

  std::set<std::string> names;
  for (const auto& c : ds.concepts) {
    if (c.name.empty()) flag("concept-name", "empty concept name");
    if (!names.insert(c.name).second) flag("concept-unique", "duplicate concept '" + c.name + "'");
  }

  auto check_split = [&](const std::vector<RelationPair>& pairs, const char* split,
                         std::initializer_list<RelationKind> kinds, bool zst) {
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& p : pairs) {
      if (std::find(kinds.begin(), kinds.end(), p.kind) == kinds.end()) {
        flag("kind", std::string(split) + ": " + describe(p) + " has a kind not allowed here");
      }
      if (p.a.empty() || p.b.empty()) flag("concept-name", describe(p) + " has an empty concept");
      if (p.a == p.b) flag("self-pair", describe(p) + " relates a concept to itself");
      if (!ds.find(p.a) || !ds.find(p.b)) {
        flag("concept-table", describe(p) + " references a concept missing from the table");
      }
      const bool level_ok = zst ? p.level == 0
                                : (p.level == 1 || p.level == 2 || p.level == 4 || p.level == 8);
      if (!level_ok) flag("level", describe(p) + " has level " + std::to_string(p.level));
      if (!seen.insert(key(p)).second) {
        flag("duplicate", std::string(split) + ": " + describe(p) + " appears twice");
      }
    }
  };
  check_split(ds.train, "train", {RelationKind::IsA, RelationKind::HasA, RelationKind::Neg}, false);
  check_split(ds.val, "val", {RelationKind::INeg}, false);
  check_split(ds.zst, "zst", {RelationKind::ZstPos, RelationKind::ZstNeg}, true);

  if (options.expect_builtin_counts) {
    auto count = [](const std::vector<RelationPair>& v, RelationKind k) {
      return std::count_if(v.begin(), v.end(), [k](const auto& p) { return p.kind == k; });
    };
    auto expect = [&](const char* what, std::ptrdiff_t got, std::ptrdiff_t want) {
      if (got != want) {
        flag("count", std::string(what) + ": expected " + std::to_string(want) +
                          ", found " + std::to_string(got));
      }
    };
    expect("train pairs", static_cast<std::ptrdiff_t>(ds.train.size()), 42);
    expect("train is_a", count(ds.train, RelationKind::IsA), 15);
    expect("train has_a", count(ds.train, RelationKind::HasA), 12);
    expect("train neg", count(ds.train, RelationKind::Neg), 15);
    expect("val pairs", static_cast<std::ptrdiff_t>(ds.val.size()), 13);
    expect("zst pairs", static_cast<std::ptrdiff_t>(ds.zst.size()), 15);
    expect("zst positive", count(ds.zst, RelationKind::ZstPos), 9);
    expect("zst negative", count(ds.zst, RelationKind::ZstNeg), 6);
  }

  std::set<std::pair<std::string, std::string>> train_pairs;
  for (const auto& p : ds.train) train_pairs.insert(key(p));
  for (const auto& p : ds.val) {
    if (train_pairs.count(key(p))) {
      flag("val-disjoint", describe(p) + " also appears in train");
    }
  }
  const auto vocab = ds.train_vocabulary();
  const std::set<std::string> train_vocab(vocab.begin(), vocab.end());
  for (const auto& p : ds.zst) {
    if (train_pairs.count(key(p))) {
      flag("zst-disjoint", describe(p) + " also appears in train");
    }
    if (train_vocab.count(p.a)) {
      flag("zst-vocabulary", describe(p) + ": query concept '" + p.a +
                                 "' belongs to the training vocabulary");
    }
  }
  return out;
}

std::vector<LspTriple> lsp_triples(const OntologyDataset& ds) {
  std::vector<LspTriple> out;
  for (const auto& isa : ds.train) {
    if (isa.kind != RelationKind::IsA) continue;
    for (const auto& has : ds.train) {
      if (has.kind == RelationKind::HasA && has.a == isa.b) {
        out.push_back({isa.a, isa.b, has.b});
      }
    }
  }
  return out;
}

json to_json(const OntologyDataset& ds) {
  json concepts = json::array();
  for (const auto& c : ds.concepts) {
    json jc = {{"name", c.name}};
    if (!c.context.empty()) jc["context"] = c.context;
    if (!c.domain_tag.empty()) jc["domain_tag"] = c.domain_tag;
    concepts.push_back(std::move(jc));
  }
  auto pairs = [](const std::vector<RelationPair>& v) {
    json arr = json::array();
    for (const auto& p : v) arr.push_back(pair_to_json(p));
    return arr;
  };
  return {{"concepts", concepts},
          {"train", pairs(ds.train)},
          {"val", pairs(ds.val)},
          {"zst", pairs(ds.zst)}};
}

OntologyDataset dataset_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("dataset: top level must be an object");
  for (const auto& [k, v] : j.items()) {
    if (k != "concepts" && k != "train" && k != "val" && k != "zst") {
      throw SchemaError("dataset: unknown top-level key '" + k + "'");
    }
  }
  OntologyDataset ds;
  std::set<std::string> seen;
  if (j.contains("concepts")) {
    const auto& arr = j.at("concepts");
    if (!arr.is_array()) throw SchemaError("concepts: expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string where = "concepts[" + std::to_string(i) + "]";
      Concept c;
      try {
        c.name = arr[i].at("name").get<std::string>();
        c.context = arr[i].value("context", std::string{});
        c.domain_tag = arr[i].value("domain_tag", std::string{});
      } catch (const json::exception& e) {
        throw SchemaError(where + ": " + e.what());
      }
      if (c.name.empty()) throw SchemaError(where + ": empty name");
      if (!seen.insert(c.name).second) {
        throw SchemaError(where + ": duplicate concept name '" + c.name + "'");
      }
      ds.concepts.push_back(std::move(c));
    }
  }
  for (const char* split : {"train", "val", "zst"}) {
    if (!j.contains(split)) throw SchemaError(std::string("dataset: missing key '") + split + "'");
    const auto& arr = j.at(split);
    if (!arr.is_array()) throw SchemaError(std::string(split) + ": expected an array");
    auto& target = std::string_view(split) == "train" ? ds.train
                   : std::string_view(split) == "val" ? ds.val
                                                      : ds.zst;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      target.push_back(pair_from_json(arr[i], std::string(split) + "[" + std::to_string(i) + "]"));
    }
  }
  for (const auto* split : {&ds.train, &ds.val, &ds.zst}) {
    for (const auto& p : *split) {
      add_concept(ds.concepts, seen, p.a);
      add_concept(ds.concepts, seen, p.b);
    }
  }
  return ds;
}

OntologyDataset load_dataset(const std::filesystem::path& path,
                             const ValidationOptions& options) {
  OntologyDataset ds;
  try {
    ds = dataset_from_json(io::read_json(path));
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  const auto violations = validate(ds, options);
  if (!violations.empty()) {
    std::string msg = path.string() + ": dataset failed validation:";
    for (const auto& v : violations) msg += "\n  [" + v.rule + "] " + v.detail;
    throw SchemaError(msg);
  }
  return ds;
}

void save_dataset(const OntologyDataset& ds, const std::filesystem::path& path) {
  io::write_json(path, to_json(ds));
}

}  // namespace aop
