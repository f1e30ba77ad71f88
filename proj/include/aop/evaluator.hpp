#pragma once

// Zero-shot is-a classification on binary codes, per-layer accuracy curves,
// late-layer collapse / cliff diagnostics, and report files.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aop/crystallisation.hpp"
#include "aop/dataset.hpp"

namespace aop {

inline constexpr double kDefaultTau = 0.7;
inline constexpr double kDefaultDelta = 0.1;
inline constexpr int kEvalReportVersion = 1;

struct PairVerdict {
  RelationPair pair;
  double inclusion = 0;
  double hamming = 0;  // hamming_norm(a ⊙ b, b)
  bool inclusion_ok = false;  // inclusion >= tau
  bool hamming_ok = false;    // hamming <= delta
  bool predicted = false;     // both
  bool expected = false;
  bool correct_overall = false;
  bool correct_inclusion = false;
  bool correct_hamming = false;
  std::string diagnostic;  // set when |b| = 0
};

// Expected label comes from the pair kind: IsA/ZstPos are positives, every
// other kind is a negative. Throws LookupError on a missing code.
PairVerdict classify_pair(const CodeMap& codes, const RelationPair& pair,
                          double tau = kDefaultTau, double delta = kDefaultDelta);

// 100 * correct / total, rounded half-up to two decimals.
double percent_2dp(std::size_t correct, std::size_t total);

struct LayerEval {
  int layer = 0;
  double overall = 0, inclusion = 0, hamming = 0;
  double mean_inclusion = 0;  // over positive pairs
  std::vector<PairVerdict> verdicts;
};

LayerEval eval_layer(const CodeMap& codes, const std::vector<RelationPair>& pairs, int layer = 0,
                     double tau = kDefaultTau, double delta = kDefaultDelta);

struct Cliff {
  int layer = 0;
  double drop = 0;
};

struct Diagnosis {
  double peak_accuracy = 0;
  int peak_layer = 0;  // first layer reaching the peak
  double final_accuracy = 0;
  bool collapsed = false;
  std::vector<Cliff> cliffs;
  std::optional<double> end_stability;
  bool stable = false;  // not collapsed and peak >= 85
};

// Positions index the input vectors; layer numbers are `first_layer + i`.
// Needs at least 6 entries. `mean_inclusion_by_layer` may be empty.
Diagnosis diagnose(const std::vector<double>& accuracy_by_layer,
                   const std::vector<double>& mean_inclusion_by_layer = {}, int first_layer = 0);

struct EvalReport {
  std::string model_id;
  std::string condition;
  double tau = kDefaultTau;
  double delta = kDefaultDelta;
  std::vector<LayerEval> layers;
  std::optional<int> best_sc_layer;
  std::optional<double> max_sc;
  std::optional<Diagnosis> diagnosis;  // absent with fewer than 6 layers
};

EvalReport build_report(std::string model_id, std::string condition, std::vector<LayerEval> layers,
                        const SCProfile& sc, double tau, double delta);

// The layer entry for the best SC layer, if it was evaluated.
const LayerEval* best_layer_eval(const EvalReport& r);

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

// Markdown headline table over any number of reports (one row each).
std::string summary_table(const std::vector<EvalReport>& reports);
std::string summary_markdown(const EvalReport& r);
std::string curves_csv(const EvalReport& r, const SCProfile& sc);

// report.json, summary.md, curves.csv under `dir`.
void emit_report(const EvalReport& r, const SCProfile& sc, const std::filesystem::path& dir);

}  // namespace aop
