#pragma once

// Relational datasets: the 42 training keys, the 13 independent negatives
// and the 15-pair zero-shot set, plus JSON loading and validation.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace aop {

enum class RelationKind { IsA, HasA, Neg, INeg, ZstPos, ZstNeg };

std::string_view to_string(RelationKind kind);
RelationKind relation_kind_from_string(std::string_view s);

struct Concept {
  std::string name;
  // Query string presented to the model; empty means "use the name".
  std::string context;
  std::string domain_tag;

  const std::string& query() const { return context.empty() ? name : context; }
  friend bool operator==(const Concept&, const Concept&) = default;
};

// For IsA: a is-a b (a = child, b = parent). For HasA: a has part b
// (a = whole, b = part). For ZstPos/ZstNeg: expected a ⊆ b true/false.
struct RelationPair {
  RelationKind kind = RelationKind::IsA;
  std::string a;
  std::string b;
  int level = 0;
  bool known_hard = false;

  friend bool operator==(const RelationPair&, const RelationPair&) = default;
};

// (child, parent, part): child is-a parent and parent has-a part.
struct LspTriple {
  std::string child;
  std::string parent;
  std::string part;
  friend bool operator==(const LspTriple&, const LspTriple&) = default;
};

struct OntologyDataset {
  std::vector<Concept> concepts;
  std::vector<RelationPair> train;
  std::vector<RelationPair> val;
  std::vector<RelationPair> zst;

  const Concept* find(std::string_view name) const;
  // Distinct names appearing in train pairs, first-seen order.
  std::vector<std::string> train_vocabulary() const;
  // Every concept name in the table, table order.
  std::vector<std::string> concept_names() const;

  friend bool operator==(const OntologyDataset&, const OntologyDataset&) = default;
};

struct Violation {
  std::string rule;
  std::string detail;
};

struct ValidationOptions {
  // Enforce the 15/12/15 train split, 13 val and 9+6 zst counts.
  bool expect_builtin_counts = true;
};

OntologyDataset builtin_dataset();

std::vector<Violation> validate(const OntologyDataset& ds,
                                const ValidationOptions& options = {});

// Join of IsA and HasA train pairs on the shared parent concept, in train
// order of the IsA pair then the HasA pair.
std::vector<LspTriple> lsp_triples(const OntologyDataset& ds);

nlohmann::json to_json(const OntologyDataset& ds);
// Throws SchemaError with a JSON path on malformed input.
OntologyDataset dataset_from_json(const nlohmann::json& j);

// Parses and validates; throws SchemaError on parse errors, schema errors and
// validation violations.
OntologyDataset load_dataset(const std::filesystem::path& path,
                             const ValidationOptions& options = {});
void save_dataset(const OntologyDataset& ds, const std::filesystem::path& path);

}  // namespace aop
