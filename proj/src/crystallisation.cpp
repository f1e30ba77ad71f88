#include "aop/crystallisation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "aop/error.hpp"
#include "aop/io_util.hpp"
#include "aop/synth.hpp"

namespace aop {
namespace {

using nlohmann::json;

const BitCode& code_of(const CodeMap& codes, const std::string& name) {
  auto it = codes.find(name);
  if (it == codes.end()) throw LookupError("no code for concept '" + name + "'");
  return it->second;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

json optional_number(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> number_or_null(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

double algebraic_loss_density(const CodeMap& codes, const OntologyDataset& ds) {
  double sum = 0;
  std::size_t count = 0;
  for (const auto& p : ds.train) {
    if (p.kind != RelationKind::Neg) continue;
    const BitCode& a = code_of(codes, p.a);
    const BitCode& b = code_of(codes, p.b);
    if (a.size() == 0) throw DimensionError("algebraic_loss_density: empty code length");
    sum += static_cast<double>(intersect_count(a, b)) / static_cast<double>(a.size());
    ++count;
  }
  if (count == 0) throw ConfigError("algebraic_loss_density: dataset has no negation pairs");
  return sum / static_cast<double>(count);
}

double rho_estimate(const CodeMap& codes, const OntologyDataset& ds) {
  std::set<std::string> names;
  for (const auto& p : ds.train) {
    if (p.kind == RelationKind::IsA || p.kind == RelationKind::HasA) {
      names.insert(p.a);
      names.insert(p.b);
    }
  }
  if (names.empty()) throw ConfigError("rho_estimate: no is-a/has-a concepts");
  double sum = 0;
  for (const auto& name : names) {
    const BitCode& c = code_of(codes, name);
    if (c.size() == 0) throw DimensionError("rho_estimate: empty code length");
    sum += static_cast<double>(c.count()) / static_cast<double>(c.size());
  }
  return sum / static_cast<double>(names.size());
}

std::optional<double> density_normalised_loss(const CodeMap& codes, const OntologyDataset& ds) {
  const double rho = rho_estimate(codes, ds);
  if (rho <= 0) return std::nullopt;
  return algebraic_loss_density(codes, ds) / (rho * rho);
}

std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::Crystalline: return "crystalline";
    case Regime::Gas: return "gas";
    case Regime::Collapsed: return "collapsed";
  }
  return "?";
}

Regime regime_of(double sc, const RegimeThresholds& t) {
  if (sc < t.collapsed_below) return Regime::Collapsed;
  if (sc >= t.crystalline_from) return Regime::Crystalline;
  return Regime::Gas;
}

void PipelineConfig::check() const {
  if (projection_dim < 1) throw ConfigError("projection_dim must be >= 1");
  if (!(regimes.collapsed_below <= regimes.crystalline_from)) {
    throw ConfigError("regime thresholds out of order");
  }
  if (threads < 0) throw ConfigError("threads must be >= 0");
  weights.check();
  train.check();
}

json to_json(const PipelineConfig& c) {
  return {{"projection_dim", c.projection_dim},
          {"init_seed", c.init_seed},
          {"loss_weights", to_json(c.weights)},
          {"train", to_json(c.train)},
          {"regimes",
           {{"collapsed_below", c.regimes.collapsed_below},
            {"crystalline_from", c.regimes.crystalline_from}}},
          {"threads", c.threads}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("pipeline config: expected an object");
  PipelineConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "projection_dim") c.projection_dim = v.get<int>();
      else if (key == "init_seed") c.init_seed = v.get<std::uint64_t>();
      else if (key == "loss_weights") c.weights = loss_weights_from_json(v);
      else if (key == "train") c.train = train_config_from_json(v);
      else if (key == "threads") c.threads = v.get<int>();
      else if (key == "regimes") {
        for (const auto& [rk, rv] : v.items()) {
          if (rk == "collapsed_below") c.regimes.collapsed_below = rv.get<double>();
          else if (rk == "crystalline_from") c.regimes.crystalline_from = rv.get<double>();
          else throw SchemaError("pipeline config: unknown regimes field '" + rk + "'");
        }
      } else {
        throw SchemaError("pipeline config: unknown field '" + key + "'");
      }
    } catch (const json::exception& e) {
      throw SchemaError("pipeline config: field '" + key + "': " + e.what());
    }
  }
  try {
    c.check();
  } catch (const ConfigError& e) {
    throw SchemaError(std::string("pipeline config: ") + e.what());
  }
  return c;
}

std::string config_hash(const PipelineConfig& c) {
  json j = to_json(c);
  j.erase("threads");
  return io::sha256_hex(j.dump());
}

BaselineStats stats_from_samples(std::vector<double> samples, std::vector<std::uint64_t> seeds) {
  if (samples.size() < 2) {
    throw ConfigError("baseline needs at least 2 q samples, found " + std::to_string(samples.size()));
  }
  BaselineStats s;
  double sum = 0;
  for (double q : samples) sum += q;
  s.mu_rand = sum / static_cast<double>(samples.size());
  double ss = 0;
  for (double q : samples) ss += (q - s.mu_rand) * (q - s.mu_rand);
  s.var_rand = ss / static_cast<double>(samples.size());
  s.sample_size = samples.size();
  s.degenerate = std::all_of(samples.begin(), samples.end(),
                             [&](double q) { return q == samples.front(); });
  if (s.degenerate) s.var_rand = 0;
  s.samples = std::move(samples);
  s.seeds = std::move(seeds);
  return s;
}

json to_json(const BaselineStats& s) {
  return {{"mu_rand", s.mu_rand},
          {"var_rand", s.var_rand},
          {"variance", "population"},
          {"sample_size", s.sample_size},
          {"seeds", s.seeds},
          {"samples", s.samples},
          {"skipped_layers", s.skipped_layers},
          {"degenerate", s.degenerate},
          {"cache_key", s.cache_key}};
}

BaselineStats baseline_stats_from_json(const json& j) {
  BaselineStats s;
  try {
    s.mu_rand = j.at("mu_rand").get<double>();
    s.var_rand = j.at("var_rand").get<double>();
    s.sample_size = j.at("sample_size").get<std::size_t>();
    s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    s.samples = j.value("samples", std::vector<double>{});
    s.skipped_layers = j.value("skipped_layers", std::size_t{0});
    s.degenerate = j.value("degenerate", false);
    s.cache_key = j.value("cache_key", std::string{});
  } catch (const json::exception& e) {
    throw SchemaError(std::string("baseline stats: ") + e.what());
  }
  if (s.sample_size < 2 || !(s.var_rand >= 0)) {
    throw SchemaError("baseline stats: need sample_size >= 2 and var_rand >= 0");
  }
  return s;
}

std::string baseline_cache_key(const BundleShape& shape, const OntologyDataset& ds,
                               const PipelineConfig& cfg) {
  const json key = {{"shape", to_json(shape)},
                    {"dataset", io::sha256_hex(to_json(ds).dump())},
                    {"config", config_hash(cfg)}};
  return io::sha256_hex(key.dump());
}

CodeMap project_layer(const HiddenBundle& bundle, int layer, const ProjectorParams& p) {
  Eigen::MatrixXd h(bundle.hidden_dim, static_cast<Eigen::Index>(bundle.concepts.size()));
  for (std::size_t c = 0; c < bundle.concepts.size(); ++c) {
    h.col(static_cast<Eigen::Index>(c)) = lmp_pool(bundle, bundle.concepts[c].name, layer).values;
  }
  const Eigen::MatrixXd z = forward_batch(p, h);
  CodeMap codes;
  for (std::size_t c = 0; c < bundle.concepts.size(); ++c) {
    codes.emplace(bundle.concepts[c].name, binarize(z.col(static_cast<Eigen::Index>(c))));
  }
  return codes;
}

LayerFit fit_layer(const HiddenBundle& bundle, const OntologyDataset& ds, int layer,
                   const PipelineConfig& cfg, TrainResult* full_result) {
  ConceptVectors vectors;
  for (const auto& name : ds.train_vocabulary()) {
    vectors.emplace(name, lmp_pool(bundle, name, layer).values);
  }
  const ProjectorParams init = init_params(bundle.hidden_dim, cfg.projection_dim, cfg.init_seed);
  TrainResult result = train(init, ds, vectors, cfg.weights, cfg.train);

  LayerFit fit;
  fit.layer = layer;
  fit.best_loss = result.best_loss;
  fit.best_step = result.best_step;
  fit.steps_run = result.history.size();
  fit.stop_reason = result.stop_reason;
  fit.codes = project_layer(bundle, layer, result.best_params);
  fit.params = std::move(result.best_params);
  if (full_result) {
    result.best_params = fit.params;
    *full_result = std::move(result);
  }
  return fit;
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (next >= count || error) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

BaselineStats baseline_stats(const BundleShape& shape, const OntologyDataset& ds,
                             const std::vector<std::uint64_t>& seeds, const PipelineConfig& cfg) {
  cfg.check();
  if (seeds.size() < 2) throw ConfigError("baseline needs at least 2 seeds (variance)");
  const std::size_t layers = static_cast<std::size_t>(shape.layer_count) + 1;
  std::vector<std::optional<double>> q(seeds.size() * layers);
  std::vector<HiddenBundle> bundles;
  for (auto s : seeds) bundles.push_back(random_bundle(shape, s));
  parallel_for(q.size(), cfg.threads, [&](std::size_t job) {
    const auto& bundle = bundles[job / layers];
    const int layer = static_cast<int>(job % layers);
    q[job] = density_normalised_loss(fit_layer(bundle, ds, layer, cfg).codes, ds);
  });
  std::vector<double> samples;
  std::size_t skipped = 0;
  for (const auto& v : q) {
    if (v) samples.push_back(*v);
    else ++skipped;
  }
  BaselineStats stats = stats_from_samples(std::move(samples), seeds);
  stats.skipped_layers = skipped;
  stats.cache_key = baseline_cache_key(shape, ds, cfg);
  return stats;
}

double sc_of_layer(double q, const BaselineStats& stats) {
  if (!std::isfinite(q)) throw NumericError("sc_of_layer: q is not finite");
  return (stats.mu_rand - q) * stats.var_rand;
}

std::optional<double> sc_of_layer(std::optional<double> q, const BaselineStats& stats) {
  if (!q) return std::nullopt;
  return sc_of_layer(*q, stats);
}

SCProfile make_profile(const std::vector<LayerFit>& fits, const OntologyDataset& ds,
                       const BaselineStats& stats, const RegimeThresholds& thresholds) {
  SCProfile profile;
  double sc_sum = 0;
  std::size_t sc_count = 0;
  for (const auto& fit : fits) {
    LayerSC row;
    row.layer = fit.layer;
    row.l_alg = algebraic_loss_density(fit.codes, ds);
    row.rho = rho_estimate(fit.codes, ds);
    row.q = density_normalised_loss(fit.codes, ds);
    row.sc = sc_of_layer(row.q, stats);
    if (row.sc) {
      row.regime = regime_of(*row.sc, thresholds);
      sc_sum += *row.sc;
      ++sc_count;
      if (!profile.max_sc || *row.sc > *profile.max_sc) {
        profile.max_sc = row.sc;
        profile.best_layer = row.layer;
      }
    }
    profile.layers.push_back(row);
  }
  if (sc_count) profile.mean_sc = sc_sum / static_cast<double>(sc_count);
  return profile;
}

ScanResult scan(const HiddenBundle& bundle, const OntologyDataset& ds, const PipelineConfig& cfg,
                const BaselineStats& stats, const std::vector<int>& layers) {
  cfg.check();
  std::vector<int> todo = layers;
  if (todo.empty()) {
    for (int l = 0; l <= bundle.layer_count; ++l) todo.push_back(l);
  }
  std::sort(todo.begin(), todo.end());
  for (int l : todo) {
    if (l < 0 || l > bundle.layer_count) {
      throw LookupError("scan: layer " + std::to_string(l) + " outside 0.." +
                        std::to_string(bundle.layer_count));
    }
  }
  ScanResult result;
  result.fits.resize(todo.size());
  parallel_for(todo.size(), cfg.threads, [&](std::size_t i) {
    result.fits[i] = fit_layer(bundle, ds, todo[i], cfg);
  });
  result.profile = make_profile(result.fits, ds, stats, cfg.regimes);
  return result;
}

json to_json(const SCProfile& p) {
  json layers = json::array();
  for (const auto& l : p.layers) {
    layers.push_back({{"layer", l.layer},
                      {"l_alg", l.l_alg},
                      {"rho", l.rho},
                      {"q", optional_number(l.q)},
                      {"sc", optional_number(l.sc)},
                      {"regime", l.regime ? json(to_string(*l.regime)) : json(nullptr)}});
  }
  return {{"layers", layers},
          {"best_layer", p.best_layer ? json(*p.best_layer) : json(nullptr)},
          {"max_sc", optional_number(p.max_sc)},
          {"mean_sc", optional_number(p.mean_sc)}};
}

SCProfile sc_profile_from_json(const json& j) {
  SCProfile p;
  try {
    for (const auto& l : j.at("layers")) {
      LayerSC row;
      row.layer = l.at("layer").get<int>();
      row.l_alg = l.at("l_alg").get<double>();
      row.rho = l.at("rho").get<double>();
      row.q = number_or_null(l.at("q"));
      row.sc = number_or_null(l.at("sc"));
      if (!l.at("regime").is_null()) {
        const auto r = l.at("regime").get<std::string>();
        row.regime = r == "crystalline" ? Regime::Crystalline
                     : r == "gas"       ? Regime::Gas
                                        : Regime::Collapsed;
      }
      p.layers.push_back(row);
    }
    if (!j.at("best_layer").is_null()) p.best_layer = j.at("best_layer").get<int>();
    p.max_sc = number_or_null(j.at("max_sc"));
    p.mean_sc = number_or_null(j.at("mean_sc"));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("sc profile: ") + e.what());
  }
  return p;
}

std::string profile_csv(const SCProfile& p) {
  std::ostringstream out;
  out << "layer,l_alg,rho,q,sc,regime\n";
  for (const auto& l : p.layers) {
    out << l.layer << ',' << fmt(l.l_alg) << ',' << fmt(l.rho) << ','
        << (l.q ? fmt(*l.q) : "") << ',' << (l.sc ? fmt(*l.sc) : "") << ','
        << (l.regime ? to_string(*l.regime) : "") << '\n';
  }
  return out.str();
}

}  // namespace aop
