#include "aop/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <optional>
#include <ostream>
#include <regex>

#include "aop/crystallisation.hpp"
#include "aop/dataset.hpp"
#include "aop/error.hpp"
#include "aop/evaluator.hpp"
#include "aop/hidden_store.hpp"
#include "aop/io_util.hpp"
#include "aop/synth.hpp"

namespace aop {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Bad input data (dataset, bundle, run directory contents): exit 3.
struct ValidationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad flags or config files: exit 2.
struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

template <class F>
auto validating(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw ValidationFailure(what + ": " + e.what());
  }
}

template <class F>
auto configuring(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw UsageFailure(what + ": " + e.what());
  }
}

OntologyDataset dataset_arg(const std::string& path) {
  if (path.empty()) return builtin_dataset();
  return validating("dataset " + path, [&] {
    return load_dataset(path, ValidationOptions{.expect_builtin_counts = false});
  });
}

std::string dataset_hash(const OntologyDataset& ds) { return io::sha256_hex(to_json(ds).dump()); }

PipelineConfig pipeline_arg(const std::string& path) {
  if (path.empty()) return {};
  return configuring("config " + path,
                     [&] { return pipeline_config_from_json(io::read_json(path)); });
}

HiddenBundle bundle_arg(const std::string& dir) {
  return validating("bundle " + dir, [&] { return read_bundle(dir); });
}

std::string bundle_id(const std::string& dir) {
  return io::sha256_hex(io::read_file(fs::path(dir) / "manifest.json"));
}

std::vector<int> parse_layers(const std::string& spec, int layer_count) {
  std::vector<int> layers;
  if (spec.empty()) return layers;
  static const std::regex range(R"((\d+)\.\.(\d+))");
  static const std::regex single(R"(\d+)");
  std::smatch m;
  int lo, hi;
  if (std::regex_match(spec, m, range)) {
    lo = std::stoi(m[1]);
    hi = std::stoi(m[2]);
  } else if (std::regex_match(spec, m, single)) {
    lo = hi = std::stoi(m[0]);
  } else {
    throw UsageFailure("--layers: expected a..b, got '" + spec + "'");
  }
  if (lo > hi || hi > layer_count) {
    throw UsageFailure("--layers " + spec + " outside 0.." + std::to_string(layer_count));
  }
  for (int l = lo; l <= hi; ++l) layers.push_back(l);
  return layers;
}

// One per output directory. `inputs_key` hashes everything that determines
// the outputs, so a rerun with identical inputs can be skipped.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::string dataset_hash;
  std::string bundle_id;
  std::vector<std::uint64_t> seeds;
  json extra = json::object();
  std::string started_at;

  std::string inputs_key() const {
    return io::sha256_hex(json{{"command", command},
                               {"config_hash", config_hash},
                               {"dataset_hash", dataset_hash},
                               {"bundle_id", bundle_id},
                               {"seeds", seeds},
                               {"extra", extra},
                               {"tool_version", kToolVersion}}
                              .dump());
  }

  void write(const fs::path& dir) const {
    io::write_json(dir / "run_manifest.json",
                   {{"command", command},
                    {"config_hash", config_hash},
                    {"dataset_hash", dataset_hash},
                    {"bundle_id", bundle_id},
                    {"seeds", seeds},
                    {"parameters", extra},
                    {"tool_version", kToolVersion},
                    {"inputs_key", inputs_key()},
                    {"started_at", started_at},
                    {"finished_at", utc_now()}});
  }
};

bool up_to_date(const fs::path& dir, const RunManifest& m) {
  const fs::path path = dir / "run_manifest.json";
  if (!fs::exists(path)) return false;
  try {
    return io::read_json(path).value("inputs_key", std::string{}) == m.inputs_key();
  } catch (const Error&) {
    return false;
  }
}

struct Options {
  std::string dataset, config, out, bundle, baseline, shape, layers, run;
  std::vector<std::string> runs;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> plant_seed;
  std::optional<int> threads;
  std::size_t seed_count = 3;
  double tau = kDefaultTau;
  double delta = kDefaultDelta;
  bool force = false;
};

int cmd_gen_synth(const Options& o, std::ostream& out) {
  SynthSpec spec;
  if (!o.config.empty()) {
    spec = configuring("synth spec " + o.config,
                       [&] { return synth_spec_from_json(io::read_json(o.config)); });
  }
  if (o.seed) spec.seed = *o.seed;
  const std::uint64_t plant_seed = o.plant_seed.value_or(spec.seed);
  const OntologyDataset ds = dataset_arg(o.dataset);

  RunManifest m{"gen-synth", io::sha256_hex(to_json(spec).dump()), dataset_hash(ds), "",
                {spec.seed, plant_seed}, {{"plant_seed", plant_seed}}, utc_now()};
  const fs::path dir = o.out;
  if (!o.force && up_to_date(dir, m)) {
    out << "gen-synth: " << dir.string() << " is up to date, skipped\n";
    return kExitOk;
  }
  const PlantedOntology po =
      configuring("plant_ontology", [&] { return plant_ontology(ds, spec.k, plant_seed); });
  HiddenBundle bundle = embed(po, spec);
  json codes = json::object();
  for (const auto& [name, code] : po.codes) codes[name] = code.to_hex();
  bundle.provenance["planted"] = {{"k", po.k}, {"seed", plant_seed}, {"codes", codes}};
  write_bundle(bundle, dir);
  m.write(dir);
  out << "gen-synth: wrote " << bundle.concepts.size() << " concepts x "
      << bundle.num_layer_indices() << " layers to " << dir.string() << '\n';
  return kExitOk;
}

fs::path baseline_file(const std::string& arg) {
  fs::path p = arg;
  if (fs::is_directory(p)) p /= "baseline.json";
  return p;
}

int cmd_baseline(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.seed_count < 2) {
    throw UsageFailure("baseline needs --seeds >= 2 to estimate a variance");
  }
  if (o.bundle.empty() == o.shape.empty()) {
    throw UsageFailure("baseline: give exactly one of --bundle or --shape");
  }
  BundleShape shape;
  std::string source_id;
  if (!o.bundle.empty()) {
    shape = shape_of(bundle_arg(o.bundle));
    source_id = bundle_id(o.bundle);
  } else {
    shape = validating("shape " + o.shape,
                       [&] { return bundle_shape_from_json(io::read_json(o.shape)); });
    source_id = io::sha256_hex(to_json(shape).dump());
  }
  const OntologyDataset ds = dataset_arg(o.dataset);
  PipelineConfig cfg = pipeline_arg(o.config);
  if (o.threads) cfg.threads = *o.threads;
  configuring("config", [&] { cfg.check(); return 0; });

  const std::uint64_t base = o.seed.value_or(0);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < o.seed_count; ++i) seeds.push_back(base + i);

  const fs::path dir = o.out;
  const std::string key = baseline_cache_key(shape, ds, cfg);
  if (!o.force && fs::exists(dir / "baseline.json")) {
    try {
      const BaselineStats cached = baseline_stats_from_json(io::read_json(dir / "baseline.json"));
      if (cached.cache_key == key && cached.seeds == seeds) {
        out << "baseline: cached stats for key " << key.substr(0, 12) << " found in "
            << dir.string() << ", skipped\n";
        return kExitOk;
      }
    } catch (const Error& e) {
      err << "baseline: ignoring unreadable cache: " << e.what() << '\n';
    }
  }

  RunManifest m{"baseline", config_hash(cfg), dataset_hash(ds), source_id, seeds,
                {{"shape", to_json(shape)}}, utc_now()};
  const BaselineStats stats = baseline_stats(shape, ds, seeds, cfg);
  io::write_json(dir / "baseline.json", to_json(stats));
  m.write(dir);
  out << "baseline: mu_rand=" << stats.mu_rand << " var_rand=" << stats.var_rand
      << " from " << stats.sample_size << " samples\n";
  if (stats.degenerate) err << "baseline: all q samples are equal, every SC will be 0\n";
  if (stats.skipped_layers) {
    err << "baseline: " << stats.skipped_layers << " layer(s) had rho = 0 and were skipped\n";
  }
  return kExitOk;
}

int cmd_scan(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.bundle.empty() || o.baseline.empty()) {
    throw UsageFailure("scan: --bundle and --baseline are required");
  }
  const HiddenBundle bundle = bundle_arg(o.bundle);
  const OntologyDataset ds = dataset_arg(o.dataset);
  PipelineConfig cfg = pipeline_arg(o.config);
  if (o.seed) cfg.init_seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  configuring("config", [&] { cfg.check(); return 0; });
  const fs::path bfile = baseline_file(o.baseline);
  const BaselineStats stats = validating("baseline " + bfile.string(), [&] {
    return baseline_stats_from_json(io::read_json(bfile));
  });
  if (stats.cache_key != baseline_cache_key(shape_of(bundle), ds, cfg)) {
    err << "scan: warning: baseline was computed for a different shape, dataset or config\n";
  }
  std::vector<int> layers = parse_layers(o.layers, bundle.layer_count);
  if (layers.empty()) {
    for (int l = 0; l <= bundle.layer_count; ++l) layers.push_back(l);
  }

  const fs::path dir = o.out;
  RunManifest m{"scan", config_hash(cfg), dataset_hash(ds), bundle_id(o.bundle), {cfg.init_seed},
                {{"layers", layers}, {"baseline_key", stats.cache_key}}, utc_now()};
  if (!o.force && up_to_date(dir, m)) {
    out << "scan: " << dir.string() << " is up to date, skipped\n";
    return kExitOk;
  }

  std::vector<LayerFit> fits(layers.size());
  std::vector<TrainResult> results(layers.size());
  parallel_for(layers.size(), cfg.threads, [&](std::size_t i) {
    fits[i] = fit_layer(bundle, ds, layers[i], cfg, &results[i]);
  });
  const SCProfile profile = make_profile(fits, ds, stats, cfg.regimes);

  for (std::size_t i = 0; i < layers.size(); ++i) {
    write_training_run(dir / "layers" / std::to_string(layers[i]), results[i], cfg.weights,
                       cfg.train,
                       {{"layer", layers[i]},
                        {"init_seed", cfg.init_seed},
                        {"bundle_id", m.bundle_id},
                        {"stop_reason", to_string(results[i].stop_reason)}});
  }
  io::write_json(dir / "inputs" / "config.json", to_json(cfg));
  io::write_json(dir / "inputs" / "dataset.json", to_json(ds));
  io::write_json(dir / "inputs" / "baseline.json", to_json(stats));
  io::write_json(dir / "sc_profile.json", to_json(profile));
  io::write_file(dir / "sc_profile.csv", profile_csv(profile));
  m.write(dir);

  out << "scan: " << layers.size() << " layer(s); best SC layer ";
  if (profile.best_layer) {
    out << *profile.best_layer << " (SC " << *profile.max_sc << ")\n";
  } else {
    out << "undefined (no layer had rho > 0)\n";
  }
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  if (o.run.empty() || o.bundle.empty()) throw UsageFailure("eval: --run and --bundle are required");
  const fs::path run = o.run;
  if (!fs::is_directory(run)) throw UsageFailure("eval: no run directory " + run.string());
  if (!(o.tau >= 0 && o.tau <= 1) || !(o.delta >= 0 && o.delta <= 1)) {
    throw UsageFailure("eval: --tau and --delta must lie in [0, 1]");
  }
  const HiddenBundle bundle = bundle_arg(o.bundle);
  const OntologyDataset ds = dataset_arg(o.dataset);
  const SCProfile sc = validating("scan output " + run.string(), [&] {
    return sc_profile_from_json(io::read_json(run / "sc_profile.json"));
  });

  const fs::path dir = o.out.empty() ? run / "eval" : fs::path(o.out);
  RunManifest m{"eval", "", dataset_hash(ds), bundle_id(o.bundle), {},
                {{"run", io::sha256_hex(io::read_file(run / "run_manifest.json"))},
                 {"tau", o.tau},
                 {"delta", o.delta}},
                utc_now()};
  if (!o.force && up_to_date(dir, m)) {
    out << "eval: " << dir.string() << " is up to date, skipped\n";
    return kExitOk;
  }

  std::vector<LayerEval> layers;
  for (const auto& l : sc.layers) {
    const ProjectorParams p = validating("checkpoint for layer " + std::to_string(l.layer), [&] {
      return load_checkpoint(run / "layers" / std::to_string(l.layer) / "checkpoint");
    });
    const CodeMap codes =
        validating("bundle", [&] { return project_layer(bundle, l.layer, p); });
    layers.push_back(validating("zero-shot pairs", [&] {
      return eval_layer(codes, ds.zst, l.layer, o.tau, o.delta);
    }));
  }
  const EvalReport report = build_report(bundle.model_id, std::string(to_string(bundle.prompt_condition.kind)),
                                         std::move(layers), sc, o.tau, o.delta);
  emit_report(report, sc, dir);
  m.write(dir);

  out << "eval: ";
  if (const LayerEval* best = best_layer_eval(report)) {
    out << "layer " << best->layer << " overall " << best->overall << "% inclusion "
        << best->inclusion << "% hamming " << best->hamming << "%\n";
  } else {
    out << "best SC layer was not evaluated\n";
  }
  return kExitOk;
}

fs::path find_report(const fs::path& run) {
  if (fs::exists(run / "report.json")) return run / "report.json";
  if (fs::exists(run / "eval" / "report.json")) return run / "eval" / "report.json";
  throw ValidationFailure("no report.json in " + run.string() + " (run `aop eval` first)");
}

int cmd_report(const Options& o, std::ostream& out) {
  if (o.runs.empty()) throw UsageFailure("report: at least one run directory is required");
  if (o.out.empty()) throw UsageFailure("report: --out is required");
  std::vector<EvalReport> reports;
  std::vector<SCProfile> profiles;
  std::vector<std::string> report_hashes;
  for (const auto& r : o.runs) {
    if (!fs::is_directory(r)) throw UsageFailure("report: no run directory " + r);
    const fs::path path = find_report(r);
    const json j = validating(path.string(), [&] { return io::read_json(path); });
    reports.push_back(validating(path.string(), [&] { return eval_report_from_json(j); }));
    profiles.push_back(validating(path.string(), [&] {
      return j.contains("sc_profile") ? sc_profile_from_json(j.at("sc_profile")) : SCProfile{};
    }));
    report_hashes.push_back(io::sha256_hex(j.dump()));
  }

  const fs::path dir = o.out;
  RunManifest m{"report", "", "", "", {}, {{"reports", report_hashes}}, utc_now()};
  if (!o.force && up_to_date(dir, m)) {
    out << "report: " << dir.string() << " is up to date, skipped\n";
    return kExitOk;
  }

  std::string md = "# Zero-shot accuracy at the best SC layer\n\n" + summary_table(reports);
  std::string csv = "model,condition,layer,sc,regime,overall,inclusion,hamming,mean_inclusion\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    md += "\n---\n\n" + summary_markdown(reports[i]);
    std::string body = curves_csv(reports[i], profiles[i]);
    body.erase(0, body.find('\n') + 1);
    std::size_t start = 0;
    while (start < body.size()) {
      const std::size_t end = body.find('\n', start);
      csv += reports[i].model_id + ',' + reports[i].condition + ',' +
             body.substr(start, end - start) + '\n';
      start = end + 1;
    }
  }
  io::write_file(dir / "summary.md", md);
  io::write_file(dir / "curves.csv", csv);
  m.write(dir);
  out << "report: " << reports.size() << " run(s) summarised in " << (dir / "summary.md").string()
      << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Algebraic ontology projection: synthetic bundles, SC scans and zero-shot eval",
               "aop"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--dataset", o.dataset, "Dataset JSON (default: builtin tables)");
    c->add_option("--config", o.config, "Config JSON");
    c->add_option("--out", o.out, "Output directory");
    c->add_flag("--force", o.force, "Recompute even if outputs are up to date");
  };

  auto* gen = app.add_subcommand("gen-synth", "Plant an ontology and embed it as a bundle");
  common(gen);
  gen->add_option("--seed", o.seed, "Overrides the seed given in --config");
  gen->add_option("--plant-seed", o.plant_seed, "Seed for planting (default: the seed in --config)");
  gen->get_option("--out")->required();

  auto* base = app.add_subcommand("baseline", "Random-bundle baseline statistics");
  common(base);
  base->add_option("--bundle", o.bundle, "Bundle whose shape to copy");
  base->add_option("--shape", o.shape, "Bundle shape JSON");
  base->add_option("--seeds", o.seed_count, "Number of random bundles (>= 2)");
  base->add_option("--seed", o.seed, "First seed");
  base->add_option("--threads", o.threads, "Worker cap (0 = all cores)");
  base->get_option("--out")->required();

  auto* scan = app.add_subcommand("scan", "Train one projector per layer and score SC");
  common(scan);
  scan->add_option("--bundle", o.bundle, "Bundle directory")->required();
  scan->add_option("--baseline", o.baseline, "Baseline file or directory")->required();
  scan->add_option("--seed", o.seed, "Projector init seed");
  scan->add_option("--layers", o.layers, "Layer range a..b");
  scan->add_option("--threads", o.threads, "Worker cap (0 = all cores)");
  scan->get_option("--out")->required();

  auto* ev = app.add_subcommand("eval", "Zero-shot accuracy per layer of a scan run");
  ev->add_option("--dataset", o.dataset, "Dataset JSON (default: builtin tables)");
  ev->add_option("--run", o.run, "Scan run directory")->required();
  ev->add_option("--bundle", o.bundle, "Bundle directory")->required();
  ev->add_option("--tau", o.tau, "Inclusion threshold");
  ev->add_option("--delta", o.delta, "Hamming threshold");
  ev->add_option("--out", o.out, "Output directory (default: <run>/eval)");
  ev->add_flag("--force", o.force, "Recompute even if outputs are up to date");

  auto* rep = app.add_subcommand("report", "Combine evaluated runs into tables and curves");
  rep->add_option("runs", o.runs, "Run or eval directories")->required();
  rep->add_option("--out", o.out, "Output directory")->required();
  rep->add_flag("--force", o.force, "Recompute even if outputs are up to date");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "aop: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(o, out);
    if (base->parsed()) return cmd_baseline(o, out, err);
    if (scan->parsed()) return cmd_scan(o, out, err);
    if (ev->parsed()) return cmd_eval(o, out);
    if (rep->parsed()) return cmd_report(o, out);
  } catch (const UsageFailure& e) {
    err << "aop: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ValidationFailure& e) {
    err << "aop: validation failed: " << e.what() << '\n';
    return kExitValidation;
  } catch (const LookupError& e) {
    err << "aop: validation failed: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "aop: internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace aop
