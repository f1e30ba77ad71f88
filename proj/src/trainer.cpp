#include "aop/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "aop/error.hpp"
#include "aop/io_util.hpp"

namespace aop {
namespace {

using Eigen::ArrayXd;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double softplus(double x, double beta) {
  const double bx = beta * x;
  return (std::max(bx, 0.0) + std::log1p(std::exp(-std::abs(bx)))) / beta;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

ArrayXd softplus(const ArrayXd& x, double beta) {
  return x.unaryExpr([beta](double v) { return softplus(v, beta); });
}

ArrayXd sigmoid(const ArrayXd& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

ArrayXd sign(const ArrayXd& x) {
  return x.unaryExpr([](double v) { return static_cast<double>((v > 0) - (v < 0)); });
}

template <typename Pair>
bool pair_less(const Pair& x, const Pair& y) {
  return std::tie(x.a, x.b) < std::tie(y.a, y.b);
}

void require_nonneg(double v, const char* name) {
  if (!(v >= 0) || !std::isfinite(v)) {
    throw ConfigError(std::string(name) + " must be a finite nonnegative number");
  }
}

}  // namespace

void LossWeights::check() const {
  for (auto [v, name] : {std::pair{w_isa, "w_isa"}, {w_has, "w_has"}, {w_lsp, "w_lsp"},
                         {w_sep, "w_sep"}, {w_density, "w_density"},
                         {w_antizero, "w_antizero"}, {w_ortho, "w_ortho"}}) {
    require_nonneg(v, name);
  }
  if (!(w_has > w_isa)) throw ConfigError("w_has must exceed w_isa");
  if (!(w_lsp >= w_has)) throw ConfigError("w_lsp must be at least w_has");
  if (!(softplus_beta > 0)) throw ConfigError("softplus_beta must be positive");
  if (!(sep_lo < sep_hi)) throw ConfigError("sep_lo must be below sep_hi");
  if (!(rho_super > 0 && rho_super < 1 && rho_sub > 0 && rho_sub < 1)) {
    throw ConfigError("density targets must lie in (0,1)");
  }
  if (!(eps_antizero > 0)) throw ConfigError("eps_antizero must be positive");
}

nlohmann::json to_json(const LossWeights& w) {
  return {{"w_isa", w.w_isa},         {"w_has", w.w_has},
          {"w_lsp", w.w_lsp},         {"w_sep", w.w_sep},
          {"w_density", w.w_density}, {"w_antizero", w.w_antizero},
          {"w_ortho", w.w_ortho},     {"softplus_beta", w.softplus_beta},
          {"sep_lo", w.sep_lo},       {"sep_hi", w.sep_hi},
          {"rho_super", w.rho_super}, {"rho_sub", w.rho_sub},
          {"eps_antizero", w.eps_antizero}};
}

LossWeights loss_weights_from_json(const nlohmann::json& j) {
  LossWeights w;
  if (!j.is_object()) throw SchemaError("loss weights: expected an object");
  std::map<std::string, double*> fields = {
      {"w_isa", &w.w_isa},         {"w_has", &w.w_has},
      {"w_lsp", &w.w_lsp},         {"w_sep", &w.w_sep},
      {"w_density", &w.w_density}, {"w_antizero", &w.w_antizero},
      {"w_ortho", &w.w_ortho},     {"softplus_beta", &w.softplus_beta},
      {"sep_lo", &w.sep_lo},       {"sep_hi", &w.sep_hi},
      {"rho_super", &w.rho_super}, {"rho_sub", &w.rho_sub},
      {"eps_antizero", &w.eps_antizero}};
  for (const auto& [k, v] : j.items()) {
    auto it = fields.find(k);
    if (it == fields.end()) throw SchemaError("loss weights: unknown field '" + k + "'");
    if (!v.is_number()) throw SchemaError("loss weights: '" + k + "' must be a number");
    *it->second = v.get<double>();
  }
  return w;
}

ConstraintProblem::ConstraintProblem(const OntologyDataset& ds, const ConceptVectors& vectors,
                                     const LossWeights& weights)
    : w_(weights) {
  w_.check();
  std::vector<RelationPair> pairs = ds.train;
  std::sort(pairs.begin(), pairs.end(), pair_less<RelationPair>);

  std::set<std::string> names;
  for (const auto& p : pairs) {
    names.insert(p.a);
    names.insert(p.b);
  }
  names_.assign(names.begin(), names.end());
  if (names_.empty()) throw ConfigError("training set has no concepts");

  Index d = -1;
  for (const auto& name : names_) {
    auto it = vectors.find(name);
    if (it == vectors.end()) throw LookupError("no hidden vector for concept '" + name + "'");
    if (d < 0) d = it->second.size();
    if (it->second.size() != d) throw DimensionError("concept vectors differ in length");
  }
  h_.resize(d, static_cast<Index>(names_.size()));
  for (std::size_t c = 0; c < names_.size(); ++c) {
    h_.col(static_cast<Index>(c)) = vectors.find(names_[c])->second;
  }

  auto index = [this](const std::string& name) {
    return static_cast<Index>(std::lower_bound(names_.begin(), names_.end(), name) -
                              names_.begin());
  };
  std::set<std::string> as_sub, as_super;
  for (const auto& p : pairs) {
    switch (p.kind) {
      case RelationKind::IsA:
        isa_.push_back({index(p.b), index(p.a)});
        as_sub.insert(p.a);
        as_super.insert(p.b);
        break;
      case RelationKind::HasA:
        has_.push_back({index(p.b), index(p.a)});
        as_sub.insert(p.b);
        as_super.insert(p.a);
        break;
      case RelationKind::Neg:
        neg_.push_back({index(p.a), index(p.b)});
        break;
      default:
        break;
    }
  }

  OntologyDataset sorted_ds;
  sorted_ds.train = pairs;
  auto triples = lsp_triples(sorted_ds);
  std::sort(triples.begin(), triples.end(), [](const LspTriple& x, const LspTriple& y) {
    return std::tie(x.child, x.parent, x.part) < std::tie(y.child, y.parent, y.part);
  });
  for (const auto& t : triples) triples_.push_back({index(t.child), index(t.parent), index(t.part)});

  density_target_.resize(static_cast<Index>(names_.size()));
  for (std::size_t c = 0; c < names_.size(); ++c) {
    const bool super_only = as_super.count(names_[c]) && !as_sub.count(names_[c]);
    density_target_[static_cast<Index>(c)] = super_only ? w_.rho_super : w_.rho_sub;
  }
}

LossBreakdown ConstraintProblem::loss_of_codes(const MatrixXd& z, MatrixXd* dz) const {
  const double beta = w_.softplus_beta;
  const double n = static_cast<double>(z.rows());
  LossBreakdown out;
  if (dz) dz->setZero(z.rows(), z.cols());

  // z_sub * softplus(z_sub - z_super): bits of `sub` missing from `super`.
  auto inclusion_term = [&](const std::vector<IndexPair>& pairs, double weight) {
    if (pairs.empty()) return 0.0;
    const double scale = 1.0 / (static_cast<double>(pairs.size()) * n);
    double sum = 0;
    for (const auto& pr : pairs) {
      const ArrayXd zs = z.col(pr.sub).array();
      const ArrayXd zp = z.col(pr.super).array();
      const ArrayXd x = zs - zp;
      const ArrayXd sp = softplus(x, beta);
      sum += (zs * sp).sum();
      if (dz) {
        const ArrayXd sg = sigmoid(beta * x);
        dz->col(pr.sub).array() += weight * scale * (sp + zs * sg);
        dz->col(pr.super).array() -= weight * scale * zs * sg;
      }
    }
    return sum * scale;
  };
  out.isa = inclusion_term(isa_, w_.w_isa);
  out.has = inclusion_term(has_, w_.w_has);

  if (!triples_.empty()) {
    const double scale = 1.0 / (static_cast<double>(triples_.size()) * n);
    double lsp = 0, ortho = 0;
    for (const auto& t : triples_) {
      const ArrayXd zc = z.col(t.child).array();
      const ArrayXd zp = z.col(t.parent).array();
      const ArrayXd zq = z.col(t.part).array();
      const ArrayXd x = zp * zq - zc;
      lsp += softplus(x, beta).sum();
      ortho += (zc * (1.0 - zp) * zq).sum();
      if (dz) {
        const ArrayXd g = w_.w_lsp * scale * sigmoid(beta * x);
        dz->col(t.parent).array() += g * zq;
        dz->col(t.part).array() += g * zp;
        dz->col(t.child).array() -= g;
        const double wo = w_.w_ortho * scale;
        dz->col(t.child).array() += wo * (1.0 - zp) * zq;
        dz->col(t.parent).array() -= wo * zc * zq;
        dz->col(t.part).array() += wo * zc * (1.0 - zp);
      }
    }
    out.lsp = lsp * scale;
    out.ortho = ortho * scale;
  }

  if (!neg_.empty()) {
    const double scale = 1.0 / static_cast<double>(neg_.size());
    double sep = 0;
    for (const auto& pr : neg_) {
      const ArrayXd diff = z.col(pr.sub).array() - z.col(pr.super).array();
      const double dhat = diff.abs().mean();
      sep += softplus(w_.sep_lo - dhat, beta) + softplus(dhat - w_.sep_hi, beta);
      if (dz) {
        const double g = -sigmoid(beta * (w_.sep_lo - dhat)) + sigmoid(beta * (dhat - w_.sep_hi));
        const ArrayXd step = (w_.w_sep * scale * g / n) * sign(diff);
        dz->col(pr.sub).array() += step;
        dz->col(pr.super).array() -= step;
      }
    }
    out.sep = sep * scale;
  }

  {
    const double scale = 1.0 / static_cast<double>(z.cols());
    double density = 0, antizero = 0;
    for (Index c = 0; c < z.cols(); ++c) {
      const double m = z.col(c).mean();
      const double dev = m - density_target_[c];
      density += dev * dev;
      antizero += softplus(w_.eps_antizero - m, beta);
      if (dz) {
        const double g = w_.w_density * scale * 2.0 * dev -
                         w_.w_antizero * scale * sigmoid(beta * (w_.eps_antizero - m));
        dz->col(c).array() += g / n;
      }
    }
    out.density = density * scale;
    out.antizero = antizero * scale;
  }

  out.total = w_.w_isa * out.isa + w_.w_has * out.has + w_.w_lsp * out.lsp +
              w_.w_sep * out.sep + w_.w_density * out.density +
              w_.w_antizero * out.antizero + w_.w_ortho * out.ortho;
  return out;
}

LossBreakdown ConstraintProblem::loss(const ProjectorParams& p) const {
  const LossBreakdown out = loss_of_codes(forward_batch(p, h_));
  if (!std::isfinite(out.total)) throw NumericError("loss is not finite");
  return out;
}

LossBreakdown ConstraintProblem::loss_and_grad(const ProjectorParams& p, ParamGrads& grads) const {
  if (p.d() != h_.rows()) throw DimensionError("projector input dimension mismatch");
  if (!h_.allFinite()) throw NumericError("non-finite concept vector");
  const MatrixXd pre = (p.w1 * h_).colwise() - p.theta;
  const MatrixXd a = pre.array().tanh().matrix();
  const MatrixXd logits = p.gamma * (p.w2 * a);
  const MatrixXd z = (1.0 / (1.0 + (-logits.array()).exp())).matrix();

  MatrixXd dz;
  const LossBreakdown out = loss_of_codes(z, &dz);
  if (!std::isfinite(out.total)) throw NumericError("loss is not finite");

  const MatrixXd du = (dz.array() * z.array() * (1.0 - z.array())).matrix();
  grads.w2 = p.gamma * du * a.transpose();
  const MatrixXd dpre = ((p.gamma * p.w2.transpose() * du).array() * (1.0 - a.array().square())).matrix();
  grads.w1 = dpre * h_.transpose();
  grads.theta = -dpre.rowwise().sum();
  if (!grads.w1.allFinite() || !grads.w2.allFinite() || !grads.theta.allFinite()) {
    throw NumericError("gradient is not finite");
  }
  return out;
}

LossBreakdown loss_total(const ProjectorParams& p, const OntologyDataset& ds,
                         const ConceptVectors& vectors, const LossWeights& w) {
  return ConstraintProblem(ds, vectors, w).loss(p);
}

ParamGrads grad(const ProjectorParams& p, const OntologyDataset& ds,
                const ConceptVectors& vectors, const LossWeights& w) {
  ParamGrads g;
  ConstraintProblem(ds, vectors, w).loss_and_grad(p, g);
  return g;
}

void TrainConfig::check() const {
  require_nonneg(learning_rate, "learning_rate");
  require_nonneg(weight_decay, "weight_decay");
  if (!(plateau_factor > 0 && plateau_factor <= 1)) throw ConfigError("plateau_factor must be in (0,1]");
  if (buckling_window < 1) throw ConfigError("buckling_window must be >= 1");
  if (!(buckling_ratio > 1)) throw ConfigError("buckling_ratio must exceed 1");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must be in [0,1)");
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  require_nonneg(plateau_threshold, "plateau_threshold");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"max_steps", c.max_steps},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"plateau_threshold", c.plateau_threshold},
          {"buckling_window", c.buckling_window},
          {"buckling_ratio", c.buckling_ratio},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (!j.is_object()) throw SchemaError("train config: expected an object");
  for (const auto& [k, v] : j.items()) {
    try {
      if (k == "learning_rate") c.learning_rate = v.get<double>();
      else if (k == "weight_decay") c.weight_decay = v.get<double>();
      else if (k == "max_steps") c.max_steps = v.get<std::size_t>();
      else if (k == "plateau_factor") c.plateau_factor = v.get<double>();
      else if (k == "plateau_patience") c.plateau_patience = v.get<std::size_t>();
      else if (k == "plateau_threshold") c.plateau_threshold = v.get<double>();
      else if (k == "buckling_window") c.buckling_window = v.get<std::size_t>();
      else if (k == "buckling_ratio") c.buckling_ratio = v.get<double>();
      else if (k == "beta1") c.beta1 = v.get<double>();
      else if (k == "beta2") c.beta2 = v.get<double>();
      else if (k == "adam_eps") c.adam_eps = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw SchemaError("train config: unknown field '" + k + "'");
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("train config: field '" + k + "': " + e.what());
    }
  }
  return c;
}

std::string_view to_string(StopReason r) {
  return r == StopReason::MaxSteps ? "max_steps" : "buckled";
}

TrainResult train(const ProjectorParams& init, const OntologyDataset& ds,
                  const ConceptVectors& vectors, const LossWeights& w, const TrainConfig& cfg) {
  cfg.check();
  const ConstraintProblem problem(ds, vectors, w);

  TrainResult result;
  result.best_params = init;
  result.best_loss = std::numeric_limits<double>::infinity();

  ProjectorParams params = init;
  ParamGrads g;
  ParamGrads m{MatrixXd::Zero(init.n(), init.d()), VectorXd::Zero(init.n()),
               MatrixXd::Zero(init.n(), init.n())};
  ParamGrads v = m;

  double lr = cfg.learning_rate;
  double sched_best = std::numeric_limits<double>::infinity();
  std::size_t bad_steps = 0;
  // prefix_best[i] = lowest loss over steps [0, i).
  std::vector<double> prefix_best{std::numeric_limits<double>::infinity()};
  double window_sum = 0;

  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    LossBreakdown loss;
    try {
      loss = problem.loss_and_grad(params, g);
    } catch (const NumericError&) {
      result.stop_reason = StopReason::Buckled;
      break;
    }
    result.history.push_back({step, loss, lr});
    if (loss.total < result.best_loss) {
      result.best_loss = loss.total;
      result.best_step = step;
      result.best_params = params;
    }
    prefix_best.push_back(std::min(prefix_best.back(), loss.total));

    // Buckling: the trailing window's mean loss rises well above the best
    // loss reached before the window started.
    window_sum += loss.total;
    if (step >= cfg.buckling_window) {
      window_sum -= result.history[step - cfg.buckling_window].loss.total;
      const double window_mean = window_sum / static_cast<double>(cfg.buckling_window);
      const double reference = prefix_best[step + 1 - cfg.buckling_window];
      if (window_mean > cfg.buckling_ratio * reference) {
        result.stop_reason = StopReason::Buckled;
        break;
      }
    }

    if (loss.total < sched_best * (1.0 - cfg.plateau_threshold)) {
      sched_best = loss.total;
      bad_steps = 0;
    } else if (++bad_steps > cfg.plateau_patience) {
      lr *= cfg.plateau_factor;
      bad_steps = 0;
    }

    const double t = static_cast<double>(step + 1);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    auto adamw = [&](auto& param, const auto& grad, auto& m1, auto& m2) {
      param *= (1.0 - lr * cfg.weight_decay);
      m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad;
      m2 = (cfg.beta2 * m2.array() + (1.0 - cfg.beta2) * grad.array().square()).matrix();
      param.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.adam_eps);
    };
    adamw(params.w1, g.w1, m.w1, v.w1);
    adamw(params.theta, g.theta, m.theta, v.theta);
    adamw(params.w2, g.w2, m.w2, v.w2);
  }
  return result;
}

void write_training_run(const std::filesystem::path& dir, const TrainResult& result,
                        const LossWeights& w, const TrainConfig& cfg,
                        const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  nlohmann::json config = {{"loss_weights", to_json(w)},
                           {"train", to_json(cfg)},
                           {"stop_reason", to_string(result.stop_reason)},
                           {"best_step", result.best_step},
                           {"best_loss", result.best_loss},
                           {"extra", extra}};
  io::write_json(dir / "config.json", config);

  std::ostringstream csv;
  csv.precision(17);
  csv << "step,total,isa,has,lsp,sep,density,antizero,ortho,lr\n";
  for (const auto& r : result.history) {
    const auto& l = r.loss;
    csv << r.step << ',' << l.total << ',' << l.isa << ',' << l.has << ',' << l.lsp << ','
        << l.sep << ',' << l.density << ',' << l.antizero << ',' << l.ortho << ','
        << r.learning_rate << '\n';
  }
  io::write_file(dir / "history.csv", csv.str());
  save_checkpoint(result.best_params, dir / "checkpoint",
                  {{"best_step", result.best_step},
                   {"best_loss", result.best_loss},
                   {"loss_weights", to_json(w)},
                   {"train", to_json(cfg)},
                   {"extra", extra}});
}

}  // namespace aop
