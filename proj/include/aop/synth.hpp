#pragma once

// Planted binary ontologies and synthetic hidden-state bundles derived from
// them: a ground truth against which the projection and metrics are checked.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aop/dataset.hpp"
#include "aop/f2.hpp"
#include "aop/hidden_store.hpp"

namespace aop {

struct PlantedOntology {
  std::size_t k = 0;
  std::map<std::string, BitCode, std::less<>> codes;
};

// Extra child -> parent links used only for planting, e.g. to place
// zero-shot concepts (Bird -> Animal) that the training pairs never mention.
using AnchorLinks = std::vector<std::pair<std::string, std::string>>;

// Links for the builtin zero-shot vocabulary: Bird, Tree and Metal.
AnchorLinks builtin_anchor_links();

// Topologically orders the inclusion graph (train IsA/HasA, positive zero-shot
// pairs, anchors) and gives every concept its ancestors' bits plus
// max(1, floor(k / (4 |concepts|))) fresh private bits.
// Throws ConfigError if k is too small or the graph has a cycle.
PlantedOntology plant_ontology(const OntologyDataset& ds, std::size_t k, std::uint64_t seed,
                               const AnchorLinks& anchors = builtin_anchor_links());

// Exhaustive check of the planted codes against every relation in `ds`.
// Negation pairs may share only bits inherited from a common ancestor.
std::vector<Violation> validate_planted(const PlantedOntology& po, const OntologyDataset& ds);

struct SynthSpec {
  std::size_t k = 128;
  int d = 256;
  int layer_count = 5;
  std::vector<double> noise_sigma = {0.3, 0.2, 0.1, 0.02, 0.1, 0.3};
  std::size_t tokens_per_concept = 4;
  std::uint64_t seed = 0;
  std::string model_id = "synthetic";

  void check() const;
};

nlohmann::json to_json(const SynthSpec& s);
// Missing keys keep defaults; unknown keys and bad values are SchemaErrors.
SynthSpec synth_spec_from_json(const nlohmann::json& j);

// Random d x k embedding matrix with entries N(0, 1/k), seeded by spec.seed.
Eigen::MatrixXd embedding_matrix(const SynthSpec& spec);

// Token row at layer L = M code + N(0, sigma_L^2) noise; no prefill.
HiddenBundle embed(const PlantedOntology& po, const SynthSpec& spec);

// Bundle of the given shape with every value i.i.d. N(0, 1): the stochastic
// baseline.
HiddenBundle random_bundle(const BundleShape& shape, std::uint64_t seed);

}  // namespace aop
