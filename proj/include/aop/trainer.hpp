#pragma once

// Constraint losses over soft codes, their analytic gradient, and the
// AdamW + plateau-scheduler training loop with buckling detection.

#include <Eigen/Dense>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "aop/dataset.hpp"
#include "aop/projector.hpp"

namespace aop {

using ConceptVectors = std::map<std::string, Eigen::VectorXd, std::less<>>;

struct LossWeights {
  double w_isa = 1.0;
  double w_has = 2.0;
  double w_lsp = 4.0;
  double w_sep = 0.5;
  double w_density = 0.2;
  double w_antizero = 0.5;
  double w_ortho = 0.2;
  double softplus_beta = 200.0;
  double sep_lo = 0.25;
  double sep_hi = 0.75;
  double rho_super = 0.15;
  double rho_sub = 0.35;
  double eps_antizero = 0.05;

  // Throws ConfigError unless w_has > w_isa, w_lsp >= w_has, sep_lo < sep_hi,
  // densities in (0,1), and all weights nonnegative.
  void check() const;
};

nlohmann::json to_json(const LossWeights& w);
// Missing keys keep their defaults; unknown keys are a SchemaError.
LossWeights loss_weights_from_json(const nlohmann::json& j);

// Unweighted per-term values plus the weighted total.
struct LossBreakdown {
  double isa = 0, has = 0, lsp = 0, sep = 0, density = 0, antizero = 0, ortho = 0;
  double total = 0;
};

struct ParamGrads {
  Eigen::MatrixXd w1;
  Eigen::VectorXd theta;
  Eigen::MatrixXd w2;
};

// Index structures for one dataset/vector set. Concepts and pairs are kept in
// a canonical (sorted) order, so results do not depend on input pair order.
class ConstraintProblem {
 public:
  ConstraintProblem(const OntologyDataset& ds, const ConceptVectors& vectors,
                    const LossWeights& weights);

  LossBreakdown loss(const ProjectorParams& p) const;
  LossBreakdown loss_and_grad(const ProjectorParams& p, ParamGrads& grads) const;

  // Loss of fixed soft codes (columns ordered as concept_names()).
  LossBreakdown loss_of_codes(const Eigen::MatrixXd& z, Eigen::MatrixXd* dz = nullptr) const;

  const std::vector<std::string>& concept_names() const { return names_; }
  const Eigen::MatrixXd& inputs() const { return h_; }
  const LossWeights& weights() const { return w_; }

 private:
  struct IndexPair { Eigen::Index sub, super; };
  struct IndexTriple { Eigen::Index child, parent, part; };

  LossWeights w_;
  std::vector<std::string> names_;
  Eigen::MatrixXd h_;  // d x C
  std::vector<IndexPair> isa_;  // sub = parent, super = child
  std::vector<IndexPair> has_;  // sub = part, super = whole
  std::vector<IndexPair> neg_;
  std::vector<IndexTriple> triples_;
  Eigen::VectorXd density_target_;
};

LossBreakdown loss_total(const ProjectorParams& p, const OntologyDataset& ds,
                         const ConceptVectors& vectors, const LossWeights& w);
ParamGrads grad(const ProjectorParams& p, const OntologyDataset& ds,
                const ConceptVectors& vectors, const LossWeights& w);

struct TrainConfig {
  double learning_rate = 3e-3;
  double weight_decay = 1e-2;
  std::size_t max_steps = 4000;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 200;
  double plateau_threshold = 1e-4;  // relative improvement that resets patience
  std::size_t buckling_window = 50;
  double buckling_ratio = 1.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void check() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

enum class StopReason { MaxSteps, Buckled };
std::string_view to_string(StopReason r);

struct StepRecord {
  std::size_t step = 0;
  LossBreakdown loss;
  double learning_rate = 0;
};

struct TrainResult {
  ProjectorParams best_params;
  double best_loss = 0;
  std::size_t best_step = 0;
  std::vector<StepRecord> history;
  StopReason stop_reason = StopReason::MaxSteps;
};

TrainResult train(const ProjectorParams& init, const OntologyDataset& ds,
                  const ConceptVectors& vectors, const LossWeights& w, const TrainConfig& cfg);

// config.json, history.csv and checkpoint/ under `dir`.
void write_training_run(const std::filesystem::path& dir, const TrainResult& result,
                        const LossWeights& w, const TrainConfig& cfg,
                        const nlohmann::json& extra = nlohmann::json::object());

}  // namespace aop
