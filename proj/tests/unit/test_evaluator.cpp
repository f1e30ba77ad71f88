#include <doctest.h>

#include <cmath>
#include <random>

#include "aop/error.hpp"
#include "aop/evaluator.hpp"
#include "aop/io_util.hpp"
#include "oracles.hpp"

using namespace aop;

namespace {

RelationPair zst_pair(const char* a, const char* b, bool positive, bool hard = false) {
  return {positive ? RelationKind::ZstPos : RelationKind::ZstNeg, a, b, 0, hard};
}

// Accuracy curve of `n` layers that reaches `peak` at `peak_at` and ends at `last`.
std::vector<double> curve(double peak, int peak_at, double last, int n = 18) {
  std::vector<double> acc(static_cast<std::size_t>(n), 40.0);
  acc[static_cast<std::size_t>(peak_at)] = peak;
  for (int i = peak_at + 1; i < n; ++i) acc[static_cast<std::size_t>(i)] = std::min(peak, last);
  acc.back() = last;
  return acc;
}

// Builtin zero-shot pairs where every positive is exact subsumption and every
// negative is disjoint, then `wrong` positives made disjoint. Codes are one bit
// per concept, so the hamming test alone passes every negative (9/15).
CodeMap zst_codes(const OntologyDataset& ds, int wrong) {
  CodeMap codes;
  std::size_t next = 0;
  auto fresh = [&] {
    BitCode c(64);
    c.set(next++);
    return c;
  };
  for (const auto& name : ds.concept_names()) codes.emplace(name, fresh());
  // a few passes close chains such as Salmon -> Fish -> Animal
  for (int pass = 0; pass < 3; ++pass) {
    int skip = wrong;
    for (const auto& p : ds.zst) {
      if (p.kind != RelationKind::ZstPos) continue;
      if (skip > 0) {
        --skip;
        continue;
      }
      auto& a = codes.at(p.a);
      const auto& b = codes.at(p.b);
      for (std::size_t i = 0; i < 64; ++i) {
        if (b.get(i)) a.set(i);
      }
    }
  }
  return codes;
}

}  // namespace

TEST_CASE("classify_pair examples") {
  CodeMap codes{{"a", BitCode::from_binary("1111100000")},
                {"sub", BitCode::from_binary("0111100000")},
                {"far", BitCode::from_binary("0000011111")},
                {"part", BitCode::from_binary("0111100001")},
                {"zero", BitCode(10)}};
  // b ⊆ a exactly
  auto v = classify_pair(codes, zst_pair("a", "sub", true));
  CHECK(v.inclusion == 1.0);
  CHECK(v.hamming == 0.0);
  CHECK(v.predicted);
  CHECK(v.correct_overall);
  // disjoint
  v = classify_pair(codes, zst_pair("a", "far", false));
  CHECK(v.inclusion == 0.0);
  CHECK(!v.predicted);
  CHECK(v.correct_overall);
  CHECK(v.correct_inclusion);
  CHECK(v.correct_hamming);
  // n=10, |b|=5, |a⊙b|=4
  v = classify_pair(codes, zst_pair("a", "part", true));
  CHECK(v.inclusion == doctest::Approx(0.8));
  CHECK(v.hamming == doctest::Approx(0.1));
  CHECK(v.inclusion_ok);
  CHECK(v.hamming_ok);
  CHECK(v.predicted);
  // the same pair fails with a tighter delta, and only the hamming test flips
  v = classify_pair(codes, zst_pair("a", "part", true), 0.7, 0.05);
  CHECK(!v.predicted);
  CHECK(v.correct_inclusion);
  CHECK(!v.correct_hamming);
  // empty b
  v = classify_pair(codes, zst_pair("a", "zero", true));
  CHECK(!v.predicted);
  CHECK(!v.diagnostic.empty());
  CHECK(!v.correct_overall);
  v = classify_pair(codes, zst_pair("a", "zero", false));
  CHECK(v.correct_overall);
  CHECK_THROWS_AS(classify_pair(codes, zst_pair("a", "missing", true)), LookupError);
  CHECK_THROWS_AS(classify_pair(codes, zst_pair("missing", "a", true)), LookupError);
}

TEST_CASE("percentages round half up at two decimals") {
  CHECK(percent_2dp(15, 15) == 100.0);
  CHECK(percent_2dp(14, 15) == 93.33);
  CHECK(percent_2dp(13, 15) == 86.67);
  CHECK(percent_2dp(8, 15) == 53.33);
  CHECK(percent_2dp(0, 15) == 0.0);
  CHECK(percent_2dp(1, 8) == 12.5);
  CHECK(percent_2dp(1, 6) == 16.67);
  CHECK(percent_2dp(1, 80000) == 0.0);   // 0.00125 rounds down
  CHECK(percent_2dp(1, 16000) == 0.01);  // 0.00625 rounds up
  CHECK_THROWS_AS(percent_2dp(0, 0), ConfigError);
}

TEST_CASE("eval_layer on the builtin zero-shot set") {
  const auto ds = builtin_dataset();
  auto e = eval_layer(zst_codes(ds, 0), ds.zst, 4);
  CHECK(e.layer == 4);
  CHECK(e.overall == 100.0);
  CHECK(e.inclusion == 100.0);
  CHECK(e.hamming == 60.0);
  CHECK(e.mean_inclusion == 1.0);
  CHECK(e.verdicts.size() == 15);
  e = eval_layer(zst_codes(ds, 1), ds.zst);
  CHECK(e.overall == 93.33);
  e = eval_layer(zst_codes(ds, 2), ds.zst);
  CHECK(e.overall == 86.67);
  CHECK(e.mean_inclusion == doctest::Approx(7.0 / 9.0));
  auto missing = zst_codes(ds, 0);
  missing.erase("Robin");
  CHECK_THROWS_AS(eval_layer(missing, ds.zst), LookupError);
}

TEST_CASE("accuracies are multiples of 100/15 and monotone in tau") {
  const auto ds = builtin_dataset();
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    CodeMap codes;
    for (const auto& name : ds.concept_names()) {
      codes.emplace(name, oracle::code_of(oracle::random_bits(16, rng, 0.4)));
    }
    const auto e = eval_layer(codes, ds.zst);
    for (double acc : {e.overall, e.inclusion, e.hamming}) {
      const double k = acc * 15.0 / 100.0;
      CHECK(std::abs(k - std::round(k)) < 0.01);
      CHECK(percent_2dp(static_cast<std::size_t>(std::round(k)), 15) == acc);
    }
    for (const auto& p : ds.zst) {
      bool before = true;
      for (double tau : {0.0, 0.3, 0.5, 0.7, 0.9, 1.0}) {
        const bool now = classify_pair(codes, p, tau).predicted;
        CHECK((before || !now));
        before = now;
      }
    }
  }
}

TEST_CASE("diagnose on published peak and final accuracies") {
  // Gemma-2 instruct optimized: peak 93.33 at 14, final 93.33
  auto d = diagnose(curve(93.33, 14, 93.33, 27));
  CHECK(!d.collapsed);
  CHECK(d.peak_accuracy == 93.33);
  CHECK(d.peak_layer == 14);
  CHECK(d.final_accuracy == 93.33);
  CHECK(d.stable);
  // Qwen2.5 instruct optimized: 86.67 at 11, final 73.33 (13.34 pp)
  d = diagnose(curve(86.67, 11, 73.33, 29));
  CHECK(d.collapsed);
  CHECK(d.peak_layer == 11);
  CHECK(!d.stable);
  // Qwen2.5 base no-prompt: 53.33 -> 40.00
  CHECK(diagnose(curve(53.33, 7, 40.0, 29)).collapsed);
  // Qwen2.5 instruct no-prompt: 53.33 -> 46.67 is within 10 pp
  CHECK(!diagnose(curve(53.33, 8, 46.67, 29)).collapsed);
  // exactly 10 pp is not a collapse
  CHECK(!diagnose(curve(70.0, 3, 60.0)).collapsed);
  CHECK(diagnose(curve(70.0, 3, 59.99)).collapsed);
}

TEST_CASE("logic cliffs") {
  auto d = diagnose({60, 70, 80.0, 53.33, 60, 60, 60});
  REQUIRE(d.cliffs.size() == 1);
  CHECK(d.cliffs[0].layer == 3);
  CHECK(d.cliffs[0].drop == 26.67);
  d = diagnose({60, 70, 80.0, 53.33, 60, 60, 60}, {}, 10);
  CHECK(d.cliffs[0].layer == 13);
  CHECK(d.peak_layer == 12);
  // a 20 pp drop is not a cliff
  CHECK(diagnose({80, 60, 60, 60, 60, 60}).cliffs.empty());
  // a drop of exactly 25 pp counts
  CHECK(diagnose({80, 55, 55, 55, 55, 55}).cliffs.size() == 1);
  CHECK_THROWS_AS(diagnose({1, 2, 3, 4, 5}), ConfigError);
  CHECK_THROWS_AS(diagnose({1, 2, 3, 4, 5, 6}, {1, 2}), DimensionError);
}

TEST_CASE("end stability averages the final five layers") {
  const auto d = diagnose({50, 50, 50, 50, 50, 50, 50}, {0.1, 0.2, 0.4, 0.6, 0.8, 0.6, 0.6});
  REQUIRE(d.end_stability);
  CHECK(*d.end_stability == doctest::Approx(0.6));
  CHECK(!diagnose({50, 50, 50, 50, 50, 50}).end_stability);
}

namespace {

EvalReport fixed_report(int layers, SCProfile* profile_out = nullptr) {
  const auto ds = builtin_dataset();
  std::vector<LayerEval> evals;
  SCProfile sc;
  for (int l = 0; l < layers; ++l) {
    const int wrong = std::abs(l - 2);
    evals.push_back(eval_layer(zst_codes(ds, wrong), ds.zst, l));
    LayerSC row;
    row.layer = l;
    row.l_alg = 0.01 * wrong;
    row.rho = 0.3;
    row.q = 0.1 * wrong;
    row.sc = 0.5 - 0.25 * wrong;
    row.regime = regime_of(*row.sc);
    sc.layers.push_back(row);
  }
  sc.best_layer = 2;
  sc.max_sc = 0.5;
  if (profile_out) *profile_out = sc;
  // shuffled input order must not matter
  std::reverse(evals.begin(), evals.end());
  return build_report("synthetic", "planted", std::move(evals), sc, kDefaultTau, kDefaultDelta);
}

}  // namespace

TEST_CASE("report content") {
  SCProfile sc;
  const auto r = fixed_report(7, &sc);
  REQUIRE(r.layers.size() == 7);
  CHECK(r.layers.front().layer == 0);
  REQUIRE(r.diagnosis);
  CHECK(r.diagnosis->peak_layer == 2);
  CHECK(r.diagnosis->peak_accuracy == 100.0);
  CHECK(r.diagnosis->final_accuracy == percent_2dp(11, 15));
  CHECK(r.diagnosis->collapsed);
  const LayerEval* best = best_layer_eval(r);
  REQUIRE(best);
  CHECK(best->layer == 2);

  const auto j = to_json(r);
  CHECK(j.at("version") == kEvalReportVersion);
  CHECK(j.at("best_sc_layer") == 2);
  CHECK(j.at("diagnosis").at("peak_layer") == 2);
  CHECK(j.at("at_best_sc_layer").at("overall") == 100.0);
  const auto back = eval_report_from_json(j);
  CHECK(to_json(back) == j);
  auto bad = j;
  bad["version"] = 99;
  CHECK_THROWS_AS(eval_report_from_json(bad), SchemaError);
  bad = j;
  bad.erase("layers");
  CHECK_THROWS_AS(eval_report_from_json(bad), SchemaError);

  CHECK(!fixed_report(5).diagnosis);
  std::vector<LayerEval> gap = {LayerEval{.layer = 0}, LayerEval{.layer = 2}};
  CHECK_THROWS_AS(build_report("m", "c", gap, sc, 0.7, 0.1), ConfigError);
}

TEST_CASE("summary tables") {
  SCProfile sc;
  const auto r = fixed_report(7, &sc);
  CHECK(summary_table({r}) ==
        "| Model | Condition | Best Layer | Max SC | Overall | Inclusion | Hamming |\n"
        "|---|---|---|---|---|---|---|\n"
        "| synthetic | planted | 2 | 0.500 | 100.00 | 100.00 | 60.00 |\n");
  const auto md = summary_markdown(r);
  CHECK(md.find("| Peak (%) | Peak Layer | Final (%) | End Stability | Collapsed | Cliffs | Stable |") !=
        std::string::npos);
  CHECK(md.find("| 100.00 | 2 | 73.33 | 0.778 | yes | none | no |") != std::string::npos);
  // Oak/Tree and Person/Animal are the known-hard pairs
  CHECK(md.find("| Oak | Tree | is-a | 1.000 | 0.000 | is-a | yes |") != std::string::npos);
  CHECK(md.find("| Person | Animal | is-a |") != std::string::npos);

  const auto csv = curves_csv(r, sc);
  CHECK(csv.rfind("layer,sc,regime,overall,inclusion,hamming,mean_inclusion\n"
                  "0,0,gas,86.67,86.67,60.00,0.7777777778\n"
                  "1,0.25,crystalline,93.33,93.33,60.00,0.8888888889\n"
                  "2,0.5,crystalline,100.00,100.00,60.00,1\n", 0) == 0);
}

TEST_CASE("emitted report files are deterministic") {
  SCProfile sc;
  const auto r = fixed_report(7, &sc);
  oracle::TempDir a("eval_a"), b("eval_b");
  emit_report(r, sc, a.path);
  emit_report(fixed_report(7), sc, b.path);
  for (const char* f : {"report.json", "summary.md", "curves.csv"}) {
    CHECK(io::read_file(a.path / f) == io::read_file(b.path / f));
  }
  const auto j = io::read_json(a.path / "report.json");
  CHECK(j.at("sc_profile").at("best_layer") == 2);
  SCProfile short_sc = sc;
  short_sc.layers.resize(3);
  CHECK_THROWS_AS(emit_report(r, short_sc, a.path), ConfigError);
}
