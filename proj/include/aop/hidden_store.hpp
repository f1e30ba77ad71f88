#pragma once

// Hidden-state bundles on disk and Localized Mean Pooling over them.
//
// Layout of a bundle directory:
//   manifest.json
//   states/<concept dir>/<layer>.f32   (tokens x d, row-major, float32 LE)
// where tokens = prefill_token_count + context_token_count and layers run
// 0..layer_count inclusive (layer 0 is the input embedding).

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace aop {

using StateMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PromptCondition {
  enum class Kind { NoPrompt, Optimized, Custom };
  Kind kind = Kind::NoPrompt;
  // Exact prompt text for Custom; optional record for the others.
  std::string text;

  friend bool operator==(const PromptCondition&, const PromptCondition&) = default;
};

struct ConceptStates {
  std::string name;
  std::string context;
  std::size_t prefill_token_count = 0;
  std::size_t context_token_count = 0;
  // One matrix per layer index 0..layer_count.
  std::vector<StateMatrix> layers;

  std::size_t rows() const { return prefill_token_count + context_token_count; }
  friend bool operator==(const ConceptStates&, const ConceptStates&) = default;
};

struct HiddenBundle {
  std::string model_id;
  int layer_count = 0;  // transformer layers; matrices exist for 0..layer_count
  int hidden_dim = 0;
  PromptCondition prompt_condition;
  std::vector<ConceptStates> concepts;
  // Free-form producer record (tokenizer, revision, prompt bytes, ...).
  nlohmann::json provenance = nlohmann::json::object();

  int num_layer_indices() const { return layer_count + 1; }
  const ConceptStates* find(std::string_view name) const;
  friend bool operator==(const HiddenBundle&, const HiddenBundle&) = default;
};

struct ConceptVector {
  Eigen::VectorXd values;
  int layer = 0;
  std::string concept_name;
};

// Architecture descriptor of a bundle: everything except the values.
struct BundleShape {
  struct Entry {
    std::string name;
    std::size_t prefill_token_count = 0;
    std::size_t context_token_count = 0;
    friend bool operator==(const Entry&, const Entry&) = default;
  };
  int layer_count = 0;
  int hidden_dim = 0;
  std::vector<Entry> concepts;

  friend bool operator==(const BundleShape&, const BundleShape&) = default;
};

BundleShape shape_of(const HiddenBundle& bundle);
nlohmann::json to_json(const BundleShape& shape);
BundleShape bundle_shape_from_json(const nlohmann::json& j);

// Throws FormatError describing the first broken invariant.
void check_bundle(const HiddenBundle& bundle);

// Writes manifest and state files; SHA-256 digests of the state files are
// recorded in the manifest when `record_hashes` is set.
void write_bundle(const HiddenBundle& bundle, const std::filesystem::path& dir,
                  bool record_hashes = true);
HiddenBundle read_bundle(const std::filesystem::path& dir);

// Mean of the context-token rows (index >= prefill_token_count).
ConceptVector lmp_pool(const HiddenBundle& bundle, std::string_view concept_name, int layer);

std::string_view to_string(PromptCondition::Kind kind);
PromptCondition::Kind prompt_kind_from_string(std::string_view s);

}  // namespace aop
