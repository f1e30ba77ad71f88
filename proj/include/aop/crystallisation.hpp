#pragma once

// Semantic Crystallisation: density-normalised negation-overlap loss q per
// layer, scored against a randomly initialised baseline of the same shape:
//   q(L)  = L_alg(L) / rho(L)^2
//   SC(L) = (mu_rand - q(L)) * var_rand

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aop/dataset.hpp"
#include "aop/f2.hpp"
#include "aop/hidden_store.hpp"
#include "aop/projector.hpp"
#include "aop/trainer.hpp"

namespace aop {

using CodeMap = std::map<std::string, BitCode, std::less<>>;

// Mean over train negation pairs of |a ⊙ b| / n on binarised codes.
double algebraic_loss_density(const CodeMap& codes, const OntologyDataset& ds);

// Mean bit activation over the distinct concepts of train IsA/HasA pairs.
double rho_estimate(const CodeMap& codes, const OntologyDataset& ds);

// L_alg / rho^2, or nullopt when rho == 0.
std::optional<double> density_normalised_loss(const CodeMap& codes, const OntologyDataset& ds);

enum class Regime { Crystalline, Gas, Collapsed };
std::string_view to_string(Regime r);

struct RegimeThresholds {
  double collapsed_below = 0.0;
  double crystalline_from = 0.1;
};
Regime regime_of(double sc, const RegimeThresholds& t = {});

struct PipelineConfig {
  int projection_dim = kDefaultProjectionDim;
  std::uint64_t init_seed = 0;
  LossWeights weights;
  TrainConfig train;
  RegimeThresholds regimes;
  int threads = 0;  // 0 = hardware concurrency; not part of the config hash

  void check() const;
};

nlohmann::json to_json(const PipelineConfig& c);
// Keys: projection_dim, init_seed, loss_weights{}, train{}, regimes{}, threads.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
// SHA-256 of the canonical JSON form, excluding `threads`.
std::string config_hash(const PipelineConfig& c);

struct BaselineStats {
  double mu_rand = 0;
  double var_rand = 0;  // population variance
  std::size_t sample_size = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> samples;
  std::size_t skipped_layers = 0;  // layers whose q was undefined (rho = 0)
  bool degenerate = false;         // all samples equal, var_rand = 0
  std::string cache_key;
};

// Throws ConfigError with fewer than 2 samples.
BaselineStats stats_from_samples(std::vector<double> samples, std::vector<std::uint64_t> seeds);
nlohmann::json to_json(const BaselineStats& s);
BaselineStats baseline_stats_from_json(const nlohmann::json& j);

// Cache key for a baseline: bundle shape + dataset + pipeline config.
std::string baseline_cache_key(const BundleShape& shape, const OntologyDataset& ds,
                               const PipelineConfig& cfg);

// Trained projector and the binary codes it assigns at one layer.
struct LayerFit {
  int layer = 0;
  ProjectorParams params;
  double best_loss = 0;
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
  StopReason stop_reason = StopReason::MaxSteps;
  CodeMap codes;  // every concept in the bundle
};

// Pools every concept at `layer`, trains on the train pairs and binarises.
LayerFit fit_layer(const HiddenBundle& bundle, const OntologyDataset& ds, int layer,
                   const PipelineConfig& cfg, TrainResult* full_result = nullptr);

// Projects all bundle concepts at `layer` through fixed params.
CodeMap project_layer(const HiddenBundle& bundle, int layer, const ProjectorParams& p);

// For each of `seeds`: random N(0,1) bundle of `shape`, full per-layer
// pipeline, q per layer. Pools q over all layers and seeds.
BaselineStats baseline_stats(const BundleShape& shape, const OntologyDataset& ds,
                             const std::vector<std::uint64_t>& seeds, const PipelineConfig& cfg);

// (mu_rand - q) * var_rand; nullopt when q is undefined.
double sc_of_layer(double q, const BaselineStats& stats);
std::optional<double> sc_of_layer(std::optional<double> q, const BaselineStats& stats);

struct LayerSC {
  int layer = 0;
  double l_alg = 0;
  double rho = 0;
  std::optional<double> q;
  std::optional<double> sc;
  std::optional<Regime> regime;
};

struct SCProfile {
  std::vector<LayerSC> layers;
  // argmax SC, smallest layer index on ties; nullopt if no layer has SC.
  std::optional<int> best_layer;
  std::optional<double> max_sc;
  std::optional<double> mean_sc;
};

SCProfile make_profile(const std::vector<LayerFit>& fits, const OntologyDataset& ds,
                       const BaselineStats& stats, const RegimeThresholds& thresholds = {});

struct ScanResult {
  SCProfile profile;
  std::vector<LayerFit> fits;
};

// Trains one projector per layer (all layers when `layers` is empty).
ScanResult scan(const HiddenBundle& bundle, const OntologyDataset& ds, const PipelineConfig& cfg,
                const BaselineStats& stats, const std::vector<int>& layers = {});

nlohmann::json to_json(const SCProfile& p);
SCProfile sc_profile_from_json(const nlohmann::json& j);
// layer,l_alg,rho,q,sc,regime
std::string profile_csv(const SCProfile& p);

// Runs fn(0..count-1) on up to `threads` workers; rethrows the first error.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace aop
