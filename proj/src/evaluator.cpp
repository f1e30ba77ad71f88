#include "aop/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "aop/error.hpp"
#include "aop/f2.hpp"
#include "aop/io_util.hpp"

namespace aop {
namespace {

using nlohmann::json;

// Percentages are compared in integer hundredths so that 86.67 - 73.33 is
// exactly 13.34 and thresholds do not wobble with binary rounding.
long long centi(double pct) { return std::llround(pct * 100.0); }

bool expected_positive(RelationKind k) {
  return k == RelationKind::IsA || k == RelationKind::ZstPos;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

json verdict_json(const PairVerdict& v) {
  json j = {{"kind", to_string(v.pair.kind)},
            {"a", v.pair.a},
            {"b", v.pair.b},
            {"known_hard", v.pair.known_hard},
            {"inclusion", v.inclusion},
            {"hamming", v.hamming},
            {"predicted", v.predicted},
            {"expected", v.expected},
            {"correct_overall", v.correct_overall},
            {"correct_inclusion", v.correct_inclusion},
            {"correct_hamming", v.correct_hamming}};
  if (!v.diagnostic.empty()) j["diagnostic"] = v.diagnostic;
  return j;
}

PairVerdict verdict_from_json(const json& j) {
  PairVerdict v;
  v.pair.kind = relation_kind_from_string(j.at("kind").get<std::string>());
  v.pair.a = j.at("a").get<std::string>();
  v.pair.b = j.at("b").get<std::string>();
  v.pair.known_hard = j.at("known_hard").get<bool>();
  v.inclusion = j.at("inclusion").get<double>();
  v.hamming = j.at("hamming").get<double>();
  v.predicted = j.at("predicted").get<bool>();
  v.expected = j.at("expected").get<bool>();
  v.correct_overall = j.at("correct_overall").get<bool>();
  v.correct_inclusion = j.at("correct_inclusion").get<bool>();
  v.correct_hamming = j.at("correct_hamming").get<bool>();
  v.diagnostic = j.value("diagnostic", std::string{});
  return v;
}

template <class T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

PairVerdict classify_pair(const CodeMap& codes, const RelationPair& pair, double tau,
                          double delta) {
  auto ia = codes.find(pair.a);
  auto ib = codes.find(pair.b);
  if (ia == codes.end()) throw LookupError("classify_pair: no code for '" + pair.a + "'");
  if (ib == codes.end()) throw LookupError("classify_pair: no code for '" + pair.b + "'");
  const BitCode& a = ia->second;
  const BitCode& b = ib->second;

  PairVerdict v;
  v.pair = pair;
  v.expected = expected_positive(pair.kind);
  if (b.none()) {
    // Nothing to include: neither test can certify is-a.
    v.diagnostic = "empty code for '" + pair.b + "'";
    v.hamming = hamming_norm(intersect(a, b), b);
  } else {
    v.inclusion = inclusion_score(a, b);
    v.hamming = hamming_norm(intersect(a, b), b);
    v.inclusion_ok = v.inclusion >= tau;
    v.hamming_ok = v.hamming <= delta;
  }
  v.predicted = v.inclusion_ok && v.hamming_ok;
  v.correct_overall = v.predicted == v.expected;
  v.correct_inclusion = v.inclusion_ok == v.expected;
  v.correct_hamming = v.hamming_ok == v.expected;
  return v;
}

double percent_2dp(std::size_t correct, std::size_t total) {
  if (total == 0) throw ConfigError("percent_2dp: empty pair set");
  // floor((10000 * c + total/2) / total) is half-up in hundredths of a percent
  const unsigned long long num = 10000ULL * correct;
  const unsigned long long hundredths = (2 * num + total) / (2 * total);
  return static_cast<double>(hundredths) / 100.0;
}

LayerEval eval_layer(const CodeMap& codes, const std::vector<RelationPair>& pairs, int layer,
                     double tau, double delta) {
  LayerEval e;
  e.layer = layer;
  std::size_t ok_all = 0, ok_inc = 0, ok_ham = 0, positives = 0;
  double inc_sum = 0;
  for (const auto& p : pairs) {
    PairVerdict v = classify_pair(codes, p, tau, delta);
    ok_all += v.correct_overall;
    ok_inc += v.correct_inclusion;
    ok_ham += v.correct_hamming;
    if (v.expected) {
      inc_sum += v.inclusion;
      ++positives;
    }
    e.verdicts.push_back(std::move(v));
  }
  e.overall = percent_2dp(ok_all, pairs.size());
  e.inclusion = percent_2dp(ok_inc, pairs.size());
  e.hamming = percent_2dp(ok_ham, pairs.size());
  e.mean_inclusion = positives ? inc_sum / static_cast<double>(positives) : 0.0;
  return e;
}

Diagnosis diagnose(const std::vector<double>& acc, const std::vector<double>& mean_inclusion,
                   int first_layer) {
  if (acc.size() < 6) {
    throw ConfigError("diagnose: need at least 6 layers, got " + std::to_string(acc.size()));
  }
  if (!mean_inclusion.empty() && mean_inclusion.size() != acc.size()) {
    throw DimensionError("diagnose: inclusion curve length differs from accuracy curve");
  }
  Diagnosis d;
  std::size_t peak = 0;
  for (std::size_t i = 1; i < acc.size(); ++i) {
    if (centi(acc[i]) > centi(acc[peak])) peak = i;
  }
  d.peak_accuracy = acc[peak];
  d.peak_layer = first_layer + static_cast<int>(peak);
  d.final_accuracy = acc.back();
  d.collapsed = centi(d.final_accuracy) < centi(d.peak_accuracy) - 1000;
  for (std::size_t i = 1; i < acc.size(); ++i) {
    const long long drop = centi(acc[i - 1]) - centi(acc[i]);
    if (drop >= 2500) {
      d.cliffs.push_back({first_layer + static_cast<int>(i), static_cast<double>(drop) / 100.0});
    }
  }
  if (!mean_inclusion.empty()) {
    const std::size_t tail = std::min<std::size_t>(5, mean_inclusion.size());
    double s = 0;
    for (std::size_t i = mean_inclusion.size() - tail; i < mean_inclusion.size(); ++i) {
      s += mean_inclusion[i];
    }
    d.end_stability = s / static_cast<double>(tail);
  }
  d.stable = !d.collapsed && centi(d.peak_accuracy) >= 8500;
  return d;
}

EvalReport build_report(std::string model_id, std::string condition, std::vector<LayerEval> layers,
                        const SCProfile& sc, double tau, double delta) {
  std::sort(layers.begin(), layers.end(),
            [](const LayerEval& x, const LayerEval& y) { return x.layer < y.layer; });
  for (std::size_t i = 1; i < layers.size(); ++i) {
    if (layers[i].layer != layers[i - 1].layer + 1) {
      throw ConfigError("build_report: evaluated layers must be contiguous");
    }
  }
  EvalReport r;
  r.model_id = std::move(model_id);
  r.condition = std::move(condition);
  r.tau = tau;
  r.delta = delta;
  r.best_sc_layer = sc.best_layer;
  r.max_sc = sc.max_sc;
  if (layers.size() >= 6) {
    std::vector<double> acc, inc;
    for (const auto& l : layers) {
      acc.push_back(l.overall);
      inc.push_back(l.mean_inclusion);
    }
    r.diagnosis = diagnose(acc, inc, layers.front().layer);
  }
  r.layers = std::move(layers);
  return r;
}

const LayerEval* best_layer_eval(const EvalReport& r) {
  if (!r.best_sc_layer) return nullptr;
  for (const auto& l : r.layers) {
    if (l.layer == *r.best_sc_layer) return &l;
  }
  return nullptr;
}

json to_json(const EvalReport& r) {
  json layers = json::array();
  for (const auto& l : r.layers) {
    json verdicts = json::array();
    for (const auto& v : l.verdicts) verdicts.push_back(verdict_json(v));
    layers.push_back({{"layer", l.layer},
                      {"overall", l.overall},
                      {"inclusion", l.inclusion},
                      {"hamming", l.hamming},
                      {"mean_inclusion", l.mean_inclusion},
                      {"verdicts", verdicts}});
  }
  json diag = nullptr;
  if (r.diagnosis) {
    const auto& d = *r.diagnosis;
    json cliffs = json::array();
    for (const auto& c : d.cliffs) cliffs.push_back({{"layer", c.layer}, {"drop", c.drop}});
    diag = {{"peak_accuracy", d.peak_accuracy},
            {"peak_layer", d.peak_layer},
            {"final_layer_accuracy", d.final_accuracy},
            {"collapsed", d.collapsed},
            {"cliffs", cliffs},
            {"end_stability", opt(d.end_stability)},
            {"stable", d.stable}};
  }
  const LayerEval* best = best_layer_eval(r);
  json headline = nullptr;
  if (best) {
    headline = {{"overall", best->overall},
                {"inclusion", best->inclusion},
                {"hamming", best->hamming}};
  }
  return {{"version", kEvalReportVersion},
          {"model_id", r.model_id},
          {"condition", r.condition},
          {"tau", r.tau},
          {"delta", r.delta},
          {"hamming_rule", "hamming_norm(a AND b, b) <= delta"},
          {"hamming_accuracy", "hamming test alone against the expected label"},
          {"best_sc_layer", opt(r.best_sc_layer)},
          {"max_sc", opt(r.max_sc)},
          {"at_best_sc_layer", headline},
          {"diagnosis", diag},
          {"layers", layers}};
}

EvalReport eval_report_from_json(const json& j) {
  EvalReport r;
  try {
    if (j.at("version").get<int>() != kEvalReportVersion) {
      throw SchemaError("eval report: unsupported version");
    }
    r.model_id = j.at("model_id").get<std::string>();
    r.condition = j.at("condition").get<std::string>();
    r.tau = j.at("tau").get<double>();
    r.delta = j.at("delta").get<double>();
    if (!j.at("best_sc_layer").is_null()) r.best_sc_layer = j.at("best_sc_layer").get<int>();
    if (!j.at("max_sc").is_null()) r.max_sc = j.at("max_sc").get<double>();
    for (const auto& l : j.at("layers")) {
      LayerEval e;
      e.layer = l.at("layer").get<int>();
      e.overall = l.at("overall").get<double>();
      e.inclusion = l.at("inclusion").get<double>();
      e.hamming = l.at("hamming").get<double>();
      e.mean_inclusion = l.at("mean_inclusion").get<double>();
      for (const auto& v : l.at("verdicts")) e.verdicts.push_back(verdict_from_json(v));
      r.layers.push_back(std::move(e));
    }
    const json& d = j.at("diagnosis");
    if (!d.is_null()) {
      Diagnosis g;
      g.peak_accuracy = d.at("peak_accuracy").get<double>();
      g.peak_layer = d.at("peak_layer").get<int>();
      g.final_accuracy = d.at("final_layer_accuracy").get<double>();
      g.collapsed = d.at("collapsed").get<bool>();
      for (const auto& c : d.at("cliffs")) {
        g.cliffs.push_back({c.at("layer").get<int>(), c.at("drop").get<double>()});
      }
      if (!d.at("end_stability").is_null()) g.end_stability = d.at("end_stability").get<double>();
      g.stable = d.at("stable").get<bool>();
      r.diagnosis = g;
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("eval report: ") + e.what());
  }
  return r;
}

std::string summary_table(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << "| Model | Condition | Best Layer | Max SC | Overall | Inclusion | Hamming |\n"
      << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : reports) {
    const LayerEval* best = best_layer_eval(r);
    out << "| " << r.model_id << " | " << r.condition << " | "
        << (r.best_sc_layer ? std::to_string(*r.best_sc_layer) : "-") << " | "
        << (r.max_sc ? fixed(*r.max_sc, 3) : "-") << " | "
        << (best ? fixed(best->overall, 2) : "-") << " | "
        << (best ? fixed(best->inclusion, 2) : "-") << " | "
        << (best ? fixed(best->hamming, 2) : "-") << " |\n";
  }
  return out.str();
}

std::string summary_markdown(const EvalReport& r) {
  std::ostringstream out;
  out << "# Zero-shot evaluation: " << r.model_id << " (" << r.condition << ")\n\n"
      << "tau = " << num(r.tau) << ", delta = " << num(r.delta) << "\n\n"
      << summary_table({r}) << '\n';

  out << "## Late-layer behaviour\n\n";
  if (r.diagnosis) {
    const auto& d = *r.diagnosis;
    out << "| Peak (%) | Peak Layer | Final (%) | End Stability | Collapsed | Cliffs | Stable |\n"
        << "|---|---|---|---|---|---|---|\n"
        << "| " << fixed(d.peak_accuracy, 2) << " | " << d.peak_layer << " | "
        << fixed(d.final_accuracy, 2) << " | "
        << (d.end_stability ? fixed(*d.end_stability, 3) : "-") << " | "
        << (d.collapsed ? "yes" : "no") << " | ";
    if (d.cliffs.empty()) out << "none";
    for (std::size_t i = 0; i < d.cliffs.size(); ++i) {
      out << (i ? ", " : "") << "L" << d.cliffs[i].layer << " (-" << fixed(d.cliffs[i].drop, 2)
          << ")";
    }
    out << " | " << (d.stable ? "yes" : "no") << " |\n\n";
  } else {
    out << "Not computed: fewer than 6 layers evaluated.\n\n";
  }

  out << "## Known-hard pairs at the best SC layer\n\n";
  const LayerEval* best = best_layer_eval(r);
  std::vector<const PairVerdict*> hard;
  if (best) {
    for (const auto& v : best->verdicts) {
      if (v.pair.known_hard) hard.push_back(&v);
    }
  }
  if (hard.empty()) {
    out << "None.\n";
  } else {
    out << "| A | B | Expected | Inclusion | Hamming | Predicted | Correct |\n"
        << "|---|---|---|---|---|---|---|\n";
    for (const auto* v : hard) {
      out << "| " << v->pair.a << " | " << v->pair.b << " | " << (v->expected ? "is-a" : "not")
          << " | " << fixed(v->inclusion, 3) << " | " << fixed(v->hamming, 3) << " | "
          << (v->predicted ? "is-a" : "not") << " | " << (v->correct_overall ? "yes" : "no")
          << " |\n";
    }
  }
  return out.str();
}

std::string curves_csv(const EvalReport& r, const SCProfile& sc) {
  std::ostringstream out;
  out << "layer,sc,regime,overall,inclusion,hamming,mean_inclusion\n";
  for (const auto& l : r.layers) {
    const LayerSC* s = nullptr;
    for (const auto& x : sc.layers) {
      if (x.layer == l.layer) s = &x;
    }
    out << l.layer << ',' << (s && s->sc ? num(*s->sc) : "") << ','
        << (s && s->regime ? std::string(to_string(*s->regime)) : "") << ','
        << fixed(l.overall, 2) << ',' << fixed(l.inclusion, 2) << ',' << fixed(l.hamming, 2)
        << ',' << num(l.mean_inclusion) << '\n';
  }
  return out.str();
}

void emit_report(const EvalReport& r, const SCProfile& sc, const std::filesystem::path& dir) {
  for (const auto& l : r.layers) {
    if (!sc.layers.empty() &&
        std::none_of(sc.layers.begin(), sc.layers.end(),
                     [&](const LayerSC& s) { return s.layer == l.layer; })) {
      throw ConfigError("emit_report: layer " + std::to_string(l.layer) +
                        " has no SC entry");
    }
  }
  json j = to_json(r);
  j["sc_profile"] = to_json(sc);
  io::write_json(dir / "report.json", j);
  io::write_file(dir / "summary.md", summary_markdown(r));
  io::write_file(dir / "curves.csv", curves_csv(r, sc));
}

}  // namespace aop
