#include "aop/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "aop/error.hpp"
#include "aop/rng.hpp"

namespace aop {
namespace {

using nlohmann::json;

// Stream tags for stream_seed.
constexpr std::uint64_t kTagPlant = 1;
constexpr std::uint64_t kTagEmbedding = 2;
constexpr std::uint64_t kTagNoise = 3;
constexpr std::uint64_t kTagRandom = 4;

// inherits[x] = concepts whose bits x must contain.
using Graph = std::map<std::string, std::vector<std::string>, std::less<>>;

Graph train_graph(const OntologyDataset& ds, bool with_zst) {
  Graph g;
  for (const auto& p : ds.train) {
    if (p.kind == RelationKind::IsA || p.kind == RelationKind::HasA) g[p.a].push_back(p.b);
  }
  if (with_zst) {
    for (const auto& p : ds.zst) {
      if (p.kind == RelationKind::ZstPos) g[p.a].push_back(p.b);
    }
  }
  return g;
}

std::set<std::string> ancestors(const Graph& g, const std::string& start) {
  std::set<std::string> seen;
  std::vector<std::string> stack{start};
  while (!stack.empty()) {
    const std::string cur = stack.back();
    stack.pop_back();
    auto it = g.find(cur);
    if (it == g.end()) continue;
    for (const auto& up : it->second) {
      if (seen.insert(up).second) stack.push_back(up);
    }
  }
  return seen;
}

std::string describe(const RelationPair& p) {
  return std::string(to_string(p.kind)) + "(" + p.a + ", " + p.b + ")";
}

}  // namespace

AnchorLinks builtin_anchor_links() {
  return {{"Bird", "Animal"}, {"Tree", "Matter"}, {"Metal", "Mineral"}};
}

PlantedOntology plant_ontology(const OntologyDataset& ds, std::size_t k, std::uint64_t seed,
                               const AnchorLinks& anchors) {
  const std::vector<std::string> names = ds.concept_names();
  if (names.empty()) throw ConfigError("plant_ontology: dataset has no concepts");
  const std::set<std::string> known(names.begin(), names.end());

  Graph g = train_graph(ds, /*with_zst=*/true);
  for (const auto& [child, parent] : anchors) {
    if (known.count(child) && known.count(parent)) g[child].push_back(parent);
  }

  // Kahn's algorithm over "x needs y first" edges, ties broken by table order.
  std::map<std::string, std::size_t> pending;
  std::map<std::string, std::vector<std::string>> dependents;
  for (const auto& n : names) pending[n] = 0;
  for (const auto& [x, ups] : g) {
    const std::set<std::string> unique(ups.begin(), ups.end());
    for (const auto& y : unique) {
      if (!known.count(x) || !known.count(y)) {
        throw ConfigError("plant_ontology: relation references unknown concept");
      }
      ++pending[x];
      dependents[y].push_back(x);
    }
  }
  std::vector<std::string> order;
  std::vector<bool> done(names.size(), false);
  while (order.size() < names.size()) {
    bool progressed = false;
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (done[i] || pending[names[i]] != 0) continue;
      done[i] = true;
      progressed = true;
      order.push_back(names[i]);
      for (const auto& x : dependents[names[i]]) --pending[x];
    }
    if (!progressed) throw ConfigError("plant_ontology: inclusion graph has a cycle");
  }

  const std::size_t per_concept = std::max<std::size_t>(1, k / (4 * names.size()));
  if (per_concept * names.size() > k) {
    throw ConfigError("plant_ontology: k = " + std::to_string(k) + " cannot give " +
                      std::to_string(names.size()) + " concepts a private bit each");
  }

  std::vector<std::size_t> free_bits(k);
  std::iota(free_bits.begin(), free_bits.end(), std::size_t{0});
  std::mt19937_64 rng(stream_seed(seed, {kTagPlant}));
  std::shuffle(free_bits.begin(), free_bits.end(), rng);

  PlantedOntology po;
  po.k = k;
  std::size_t next = 0;
  for (const auto& name : order) {
    BitCode code(k);
    for (std::size_t j = 0; j < per_concept; ++j) code.set(free_bits[next++]);
    auto it = g.find(name);
    if (it != g.end()) {
      for (const auto& up : it->second) {
        const BitCode& inherited = po.codes.at(up);
        for (std::size_t b = 0; b < k; ++b) {
          if (inherited.get(b)) code.set(b);
        }
      }
    }
    po.codes.emplace(name, std::move(code));
  }

  const auto violations = validate_planted(po, ds);
  if (!violations.empty()) {
    throw ConfigError("plant_ontology: relations cannot be planted consistently: [" +
                      violations.front().rule + "] " + violations.front().detail);
  }
  return po;
}

std::vector<Violation> validate_planted(const PlantedOntology& po, const OntologyDataset& ds) {
  std::vector<Violation> out;
  auto flag = [&](std::string rule, std::string detail) {
    out.push_back({std::move(rule), std::move(detail)});
  };

  for (const auto& name : ds.concept_names()) {
    auto it = po.codes.find(name);
    if (it == po.codes.end()) {
      flag("missing-code", "no planted code for '" + name + "'");
    } else if (it->second.size() != po.k) {
      flag("code-length", "'" + name + "' has length " + std::to_string(it->second.size()));
    } else if (it->second.none()) {
      flag("anti-zero", "'" + name + "' has an all-zero code");
    }
  }
  if (!out.empty()) return out;

  const auto& c = po.codes;
  for (const auto& p : ds.train) {
    const BitCode& a = c.find(p.a)->second;
    const BitCode& b = c.find(p.b)->second;
    if ((p.kind == RelationKind::IsA || p.kind == RelationKind::HasA) && !is_subset(b, a)) {
      flag(p.kind == RelationKind::IsA ? "is_a" : "has_a",
           describe(p) + ": " + std::to_string(b.count() - intersect_count(a, b)) +
               " bits of '" + p.b + "' missing from '" + p.a + "'");
    }
  }
  for (const auto& t : lsp_triples(ds)) {
    const std::size_t missing =
        lsp_violation(c.find(t.child)->second, c.find(t.parent)->second, c.find(t.part)->second);
    if (missing) {
      flag("lsp", t.child + " lacks " + std::to_string(missing) + " bits of " + t.parent + " ⊙ " +
                      t.part);
    }
  }

  const Graph g = train_graph(ds, /*with_zst=*/true);
  auto check_insulation = [&](const RelationPair& p) {
    const BitCode& a = c.find(p.a)->second;
    const BitCode& b = c.find(p.b)->second;
    BitCode allowed(po.k);
    const auto anc_a = ancestors(g, p.a);
    for (const auto& y : ancestors(g, p.b)) {
      if (!anc_a.count(y)) continue;
      const BitCode& shared = c.find(y)->second;
      for (std::size_t i = 0; i < po.k; ++i) {
        if (shared.get(i)) allowed.set(i);
      }
    }
    if (!is_subset(intersect(a, b), allowed)) {
      flag("negation", describe(p) + ": codes share bits not inherited from a common ancestor");
    }
  };
  for (const auto& p : ds.train) {
    if (p.kind == RelationKind::Neg) check_insulation(p);
  }
  for (const auto& p : ds.val) check_insulation(p);

  for (const auto& p : ds.zst) {
    const bool included = is_subset(c.find(p.b)->second, c.find(p.a)->second);
    if (p.kind == RelationKind::ZstPos && !included) {
      flag("zst_pos", describe(p) + ": bits of '" + p.b + "' not contained in '" + p.a + "'");
    }
    if (p.kind == RelationKind::ZstNeg && included) {
      flag("zst_neg", describe(p) + ": bits of '" + p.b + "' contained in '" + p.a + "'");
    }
  }
  return out;
}

void SynthSpec::check() const {
  if (k < 1) throw ConfigError("synth spec: k must be >= 1");
  if (d < 1) throw ConfigError("synth spec: d must be >= 1");
  if (layer_count < 0) throw ConfigError("synth spec: layer_count must be >= 0");
  if (noise_sigma.size() != static_cast<std::size_t>(layer_count) + 1) {
    throw ConfigError("synth spec: noise_sigma needs layer_count + 1 = " +
                      std::to_string(layer_count + 1) + " entries, found " +
                      std::to_string(noise_sigma.size()));
  }
  for (double s : noise_sigma) {
    if (!(s >= 0) || !std::isfinite(s)) throw ConfigError("synth spec: noise_sigma must be >= 0");
  }
  if (tokens_per_concept < 1) throw ConfigError("synth spec: tokens_per_concept must be >= 1");
}

json to_json(const SynthSpec& s) {
  return {{"k", s.k},
          {"d", s.d},
          {"layer_count", s.layer_count},
          {"noise_sigma", s.noise_sigma},
          {"tokens_per_concept", s.tokens_per_concept},
          {"seed", s.seed},
          {"model_id", s.model_id}};
}

SynthSpec synth_spec_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("synth spec: expected an object");
  SynthSpec s;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "k") s.k = v.get<std::size_t>();
      else if (key == "d") s.d = v.get<int>();
      else if (key == "layer_count") s.layer_count = v.get<int>();
      else if (key == "noise_sigma") s.noise_sigma = v.get<std::vector<double>>();
      else if (key == "tokens_per_concept") s.tokens_per_concept = v.get<std::size_t>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else if (key == "model_id") s.model_id = v.get<std::string>();
      else throw SchemaError("synth spec: unknown field '" + key + "'");
    } catch (const json::exception& e) {
      throw SchemaError("synth spec: field '" + key + "': " + e.what());
    }
  }
  try {
    s.check();
  } catch (const ConfigError& e) {
    throw SchemaError(e.what());
  }
  return s;
}

Eigen::MatrixXd embedding_matrix(const SynthSpec& spec) {
  std::mt19937_64 rng(stream_seed(spec.seed, {kTagEmbedding}));
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(spec.k)));
  Eigen::MatrixXd m(spec.d, static_cast<Eigen::Index>(spec.k));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
  }
  return m;
}

HiddenBundle embed(const PlantedOntology& po, const SynthSpec& spec) {
  spec.check();
  if (po.k != spec.k) throw ConfigError("embed: planted k differs from spec k");
  const Eigen::MatrixXd m = embedding_matrix(spec);

  HiddenBundle b;
  b.model_id = spec.model_id;
  b.layer_count = spec.layer_count;
  b.hidden_dim = spec.d;
  b.provenance = {{"generator", "synthetic"}, {"synth_spec", to_json(spec)}};

  std::uint64_t concept_index = 0;
  for (const auto& [name, code] : po.codes) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(po.k));
    for (std::size_t i = 0; i < po.k; ++i) x[static_cast<Eigen::Index>(i)] = code.get(i) ? 1.0 : 0.0;
    const Eigen::VectorXd clean = m * x;

    ConceptStates cs;
    cs.name = name;
    cs.context = name;
    cs.prefill_token_count = 0;
    cs.context_token_count = spec.tokens_per_concept;
    for (int l = 0; l <= spec.layer_count; ++l) {
      std::mt19937_64 rng(stream_seed(spec.seed, {kTagNoise, concept_index,
                                                  static_cast<std::uint64_t>(l)}));
      std::normal_distribution<double> noise(0.0, 1.0);
      const double sigma = spec.noise_sigma[static_cast<std::size_t>(l)];
      StateMatrix mat(static_cast<Eigen::Index>(spec.tokens_per_concept), spec.d);
      for (Eigen::Index r = 0; r < mat.rows(); ++r) {
        for (Eigen::Index c = 0; c < mat.cols(); ++c) {
          mat(r, c) = static_cast<float>(clean[c] + sigma * noise(rng));
        }
      }
      cs.layers.push_back(std::move(mat));
    }
    b.concepts.push_back(std::move(cs));
    ++concept_index;
  }
  return b;
}

HiddenBundle random_bundle(const BundleShape& shape, std::uint64_t seed) {
  HiddenBundle b;
  b.model_id = "random-baseline";
  b.layer_count = shape.layer_count;
  b.hidden_dim = shape.hidden_dim;
  b.provenance = {{"generator", "random"}, {"seed", seed}};
  std::uint64_t concept_index = 0;
  for (const auto& entry : shape.concepts) {
    ConceptStates cs;
    cs.name = entry.name;
    cs.context = entry.name;
    cs.prefill_token_count = entry.prefill_token_count;
    cs.context_token_count = entry.context_token_count;
    for (int l = 0; l <= shape.layer_count; ++l) {
      std::mt19937_64 rng(stream_seed(seed, {kTagRandom, concept_index,
                                             static_cast<std::uint64_t>(l)}));
      std::normal_distribution<float> dist(0.0f, 1.0f);
      StateMatrix mat(static_cast<Eigen::Index>(cs.rows()), shape.hidden_dim);
      for (Eigen::Index i = 0; i < mat.size(); ++i) mat.data()[i] = dist(rng);
      cs.layers.push_back(std::move(mat));
    }
    b.concepts.push_back(std::move(cs));
    ++concept_index;
  }
  return b;
}

}  // namespace aop
