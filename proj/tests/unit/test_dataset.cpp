#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "aop/dataset.hpp"
#include "aop/error.hpp"
#include "aop/io_util.hpp"
#include "oracles.hpp"

using namespace aop;

namespace {

struct GoldenRow {
  std::string split, kind, a, b;
  int level;
};

std::vector<GoldenRow> golden_rows() {
  std::ifstream in(std::string(AOP_TEST_DATA) + "/builtin_pairs.tsv");
  REQUIRE(in);
  std::vector<GoldenRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    GoldenRow r;
    std::string level;
    std::getline(fields, r.split, '\t');
    std::getline(fields, r.kind, '\t');
    std::getline(fields, r.a, '\t');
    std::getline(fields, r.b, '\t');
    std::getline(fields, level, '\t');
    r.level = std::stoi(level);
    rows.push_back(r);
  }
  return rows;
}

bool has_rule(const std::vector<Violation>& v, const std::string& rule) {
  for (const auto& x : v) {
    if (x.rule == rule) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("builtin dataset matches the golden tables field for field") {
  const auto ds = builtin_dataset();
  const auto rows = golden_rows();
  std::vector<RelationPair> all;
  std::vector<std::string> splits;
  for (const auto& p : ds.train) { all.push_back(p); splits.push_back("train"); }
  for (const auto& p : ds.val) { all.push_back(p); splits.push_back("val"); }
  for (const auto& p : ds.zst) { all.push_back(p); splits.push_back("zst"); }
  REQUIRE(all.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CAPTURE(i);
    CHECK(splits[i] == rows[i].split);
    CHECK(to_string(all[i].kind) == rows[i].kind);
    CHECK(all[i].a == rows[i].a);
    CHECK(all[i].b == rows[i].b);
    CHECK(all[i].level == rows[i].level);
  }
}

TEST_CASE("builtin dataset counts and examples") {
  const auto ds = builtin_dataset();
  auto count = [](const std::vector<RelationPair>& v, RelationKind k) {
    return std::count_if(v.begin(), v.end(), [k](const auto& p) { return p.kind == k; });
  };
  CHECK(ds.train.size() == 42);
  CHECK(count(ds.train, RelationKind::IsA) == 15);
  CHECK(count(ds.train, RelationKind::HasA) == 12);
  CHECK(count(ds.train, RelationKind::Neg) == 15);
  CHECK(ds.val.size() == 13);
  CHECK(count(ds.zst, RelationKind::ZstPos) == 9);
  CHECK(count(ds.zst, RelationKind::ZstNeg) == 6);

  const RelationPair beetle{RelationKind::IsA, "Beetle", "Insect", 1, false};
  CHECK(std::find(ds.train.begin(), ds.train.end(), beetle) != ds.train.end());
  const RelationPair ocean{RelationKind::INeg, "Ocean", "Logic", 1, false};
  CHECK(std::find(ds.val.begin(), ds.val.end(), ocean) != ds.val.end());
  const RelationPair robin{RelationKind::ZstPos, "Robin", "Bird", 0, false};
  CHECK(std::find(ds.zst.begin(), ds.zst.end(), robin) != ds.zst.end());
}

TEST_CASE("known-hard flags sit on Oak/Tree and Person/Animal only") {
  std::set<std::pair<std::string, std::string>> hard;
  for (const auto& p : builtin_dataset().zst) {
    if (p.known_hard) hard.insert({p.a, p.b});
  }
  CHECK(hard == std::set<std::pair<std::string, std::string>>{{"Oak", "Tree"},
                                                              {"Person", "Animal"}});
}

TEST_CASE("builtin dataset is deterministic and valid") {
  CHECK(builtin_dataset() == builtin_dataset());
  CHECK(validate(builtin_dataset()).empty());
}

TEST_CASE("zero-shot query concepts are outside the training vocabulary") {
  const auto ds = builtin_dataset();
  const auto vocab = ds.train_vocabulary();
  const std::set<std::string> train(vocab.begin(), vocab.end());
  for (const auto& p : ds.zst) CHECK_MESSAGE(!train.count(p.a), p.a);
}

TEST_CASE("validate flags broken datasets") {
  SUBCASE("41 train pairs") {
    auto ds = builtin_dataset();
    ds.train.pop_back();
    CHECK(has_rule(validate(ds), "count"));
  }
  SUBCASE("zero-shot pair reusing a training concept") {
    auto ds = builtin_dataset();
    ds.zst[0].a = "Beetle";
    const auto v = validate(ds);
    CHECK(has_rule(v, "zst-vocabulary"));
    // independent check: the name is in the set of train concepts
    std::set<std::string> train;
    for (const auto& p : ds.train) { train.insert(p.a); train.insert(p.b); }
    CHECK(train.count("Beetle"));
  }
  SUBCASE("val pair duplicated in train") {
    auto ds = builtin_dataset();
    ds.val[0] = {RelationKind::INeg, "Beetle", "Ocean", 1, false};
    CHECK(has_rule(validate(ds), "val-disjoint"));
  }
  SUBCASE("duplicate concept names") {
    auto ds = builtin_dataset();
    ds.concepts.push_back(ds.concepts.front());
    CHECK(has_rule(validate(ds), "concept-unique"));
  }
  SUBCASE("bad level and kind") {
    auto ds = builtin_dataset();
    ds.train[0].level = 3;
    ds.val[0].kind = RelationKind::Neg;
    const auto v = validate(ds);
    CHECK(has_rule(v, "level"));
    CHECK(has_rule(v, "kind"));
  }
  SUBCASE("custom datasets may skip the count check") {
    auto ds = builtin_dataset();
    ds.train.pop_back();
    CHECK(validate(ds, {.expect_builtin_counts = false}).empty());
  }
}

TEST_CASE("lsp triples join is-a and has-a on the parent") {
  const auto triples = lsp_triples(builtin_dataset());
  const LspTriple beetle{"Beetle", "Insect", "Legs"};
  CHECK(std::find(triples.begin(), triples.end(), beetle) != triples.end());
  // brute-force count of the join
  const auto ds = builtin_dataset();
  std::size_t expected = 0;
  for (const auto& x : ds.train) {
    for (const auto& y : ds.train) {
      expected += x.kind == RelationKind::IsA && y.kind == RelationKind::HasA && y.a == x.b;
    }
  }
  CHECK(triples.size() == expected);
}

TEST_CASE("dataset JSON round trip and schema errors") {
  oracle::TempDir tmp("dataset");
  const auto path = tmp.path / "ds.json";
  save_dataset(builtin_dataset(), path);
  CHECK(load_dataset(path) == builtin_dataset());

  SUBCASE("duplicate concept names") {
    auto j = to_json(builtin_dataset());
    j["concepts"].push_back(j["concepts"][0]);
    io::write_json(path, j);
    CHECK_THROWS_AS(load_dataset(path), SchemaError);
  }
  SUBCASE("val pair duplicated in train") {
    auto j = to_json(builtin_dataset());
    j["val"][0] = {{"kind", "i_neg"}, {"a", "Beetle"}, {"b", "Ocean"}, {"level", 1}};
    io::write_json(path, j);
    try {
      load_dataset(path);
      FAIL("expected a schema error");
    } catch (const SchemaError& e) {
      CHECK(std::string(e.what()).find("val-disjoint") != std::string::npos);
    }
  }
  SUBCASE("unknown field") {
    auto j = to_json(builtin_dataset());
    j["train"][0]["weight"] = 2;
    io::write_json(path, j);
    CHECK_THROWS_AS(load_dataset(path), SchemaError);
  }
  SUBCASE("unknown kind") {
    auto j = to_json(builtin_dataset());
    j["train"][0]["kind"] = "part_of";
    io::write_json(path, j);
    CHECK_THROWS_AS(load_dataset(path), SchemaError);
  }
  SUBCASE("not JSON") {
    io::write_file(path, "{train: ");
    CHECK_THROWS_AS(load_dataset(path), SchemaError);
  }
  SUBCASE("concepts table is optional") {
    auto j = to_json(builtin_dataset());
    j.erase("concepts");
    io::write_json(path, j);
    const auto ds = load_dataset(path);
    CHECK(ds.train == builtin_dataset().train);
    CHECK(ds.find("Beetle"));
  }
}
