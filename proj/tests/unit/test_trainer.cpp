#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "aop/error.hpp"
#include "aop/io_util.hpp"
#include "aop/synth.hpp"
#include "aop/trainer.hpp"
#include "oracles.hpp"

using namespace aop;

namespace {

ConceptVectors random_vectors(const OntologyDataset& ds, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  ConceptVectors v;
  for (const auto& name : ds.train_vocabulary()) {
    v[name] = Eigen::VectorXd::NullaryExpr(d, [&] { return normal(rng); });
  }
  return v;
}

oracle::Soft soft_codes(const ProjectorParams& p, const ConceptVectors& v) {
  oracle::Soft out;
  for (const auto& [name, h] : v) {
    const Eigen::VectorXd z = forward(p, h);
    out[name] = std::vector<double>(z.data(), z.data() + z.size());
  }
  return out;
}

// Relative error with a floor so entries that are zero analytically do not
// blow up the ratio.
double rel_err(double a, double f) {
  return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-6});
}

double max_grad_error(const ProjectorParams& p, const OntologyDataset& ds,
                      const ConceptVectors& v, const LossWeights& w) {
  const ParamGrads g = grad(p, ds, v, w);
  const double h = 1e-5;
  double worst = 0;
  auto probe = [&](auto member, const auto& analytic) {
    ProjectorParams q = p;
    auto& m = q.*member;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double orig = m.data()[i];
      m.data()[i] = orig + h;
      const double up = loss_total(q, ds, v, w).total;
      m.data()[i] = orig - h;
      const double down = loss_total(q, ds, v, w).total;
      m.data()[i] = orig;
      worst = std::max(worst, rel_err(analytic.data()[i], (up - down) / (2 * h)));
    }
  };
  probe(&ProjectorParams::w1, g.w1);
  probe(&ProjectorParams::theta, g.theta);
  probe(&ProjectorParams::w2, g.w2);
  return worst;
}

}  // namespace

TEST_CASE("loss terms match the direct oracle on random params") {
  const auto ds = builtin_dataset();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto v = random_vectors(ds, 6, seed);
    auto p = init_params(6, 10, seed);
    p.w1 *= 3;
    p.w2 *= 3;
    for (const LossWeights& w : {LossWeights{}, LossWeights{.softplus_beta = 10}}) {
      const auto got = loss_total(p, ds, v, w);
      const auto want = oracle::loss_terms(soft_codes(p, v), ds, w);
      CHECK(got.isa == doctest::Approx(want.isa).epsilon(1e-12));
      CHECK(got.has == doctest::Approx(want.has).epsilon(1e-12));
      CHECK(got.lsp == doctest::Approx(want.lsp).epsilon(1e-12));
      CHECK(got.sep == doctest::Approx(want.sep).epsilon(1e-12));
      CHECK(got.density == doctest::Approx(want.density).epsilon(1e-12));
      CHECK(got.antizero == doctest::Approx(want.antizero).epsilon(1e-12));
      CHECK(got.ortho == doctest::Approx(want.ortho).epsilon(1e-12));
      CHECK(got.total == doctest::Approx(oracle::total(want, w)).epsilon(1e-12));
    }
  }
}

TEST_CASE("all terms are nonnegative") {
  const auto ds = builtin_dataset();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto v = random_vectors(ds, 5, seed);
    auto p = init_params(5, 12, seed);
    p.w2 *= static_cast<double>(seed % 5);
    const auto l = loss_total(p, ds, v, LossWeights{});
    for (double t : {l.isa, l.has, l.lsp, l.sep, l.density, l.antizero, l.ortho, l.total}) {
      CHECK(t >= 0);
    }
  }
}

TEST_CASE("constant 0.5 codes") {
  // all-zero params give z = 0.5 everywhere
  const auto ds = builtin_dataset();
  const auto v = random_vectors(ds, 4, 1);
  ProjectorParams p;
  p.w1 = Eigen::MatrixXd::Zero(8, 4);
  p.theta = Eigen::VectorXd::Zero(8);
  p.w2 = Eigen::MatrixXd::Zero(8, 8);
  const LossWeights w;
  const auto l = loss_total(p, ds, v, w);
  CHECK(l.antizero == doctest::Approx(std::log1p(std::exp(w.softplus_beta * (w.eps_antizero - 0.5))) /
                                      w.softplus_beta));
  CHECK(l.antizero < 1e-30);
  // every concept is off target by (0.5 - its target)^2
  const auto want = oracle::loss_terms(soft_codes(p, v), ds, w);
  CHECK(l.density == doctest::Approx(want.density));
  CHECK(l.density > (0.5 - w.rho_sub) * (0.5 - w.rho_sub) - 1e-12);
  CHECK(l.density < (0.5 - w.rho_super) * (0.5 - w.rho_super) + 1e-12);
}

TEST_CASE("a zero weight removes its term from the total") {
  const auto ds = builtin_dataset();
  const auto v = random_vectors(ds, 5, 4);
  const auto p = init_params(5, 9, 4);
  const auto base = loss_total(p, ds, v, LossWeights{});
  LossWeights w;
  w.w_sep = 0;
  const auto no_sep = loss_total(p, ds, v, w);
  CHECK(no_sep.total == doctest::Approx(base.total - 0.5 * base.sep).epsilon(1e-13));
  w = LossWeights{};
  w.w_ortho = 0;
  CHECK(loss_total(p, ds, v, w).total ==
        doctest::Approx(base.total - 0.2 * base.ortho).epsilon(1e-13));
}

TEST_CASE("weight ordering is enforced") {
  CHECK_THROWS_AS((LossWeights{.w_isa = 2.0, .w_has = 2.0}.check()), ConfigError);
  CHECK_THROWS_AS(LossWeights{.w_lsp = 1.5}.check(), ConfigError);
  CHECK_THROWS_AS((LossWeights{.sep_lo = 0.8, .sep_hi = 0.7}.check()), ConfigError);
  CHECK_THROWS_AS(LossWeights{.rho_super = 1.0}.check(), ConfigError);
  CHECK_NOTHROW(LossWeights{}.check());
  CHECK_THROWS_AS(loss_weights_from_json({{"w_bogus", 1}}), SchemaError);
  const auto w = loss_weights_from_json({{"w_density", 3.5}});
  CHECK(w.w_density == 3.5);
  CHECK(loss_weights_from_json(to_json(w)).w_density == 3.5);
}

TEST_CASE("analytic gradient matches central differences") {
  const auto ds = builtin_dataset();
  LossWeights w;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    const auto v = random_vectors(ds, 6, 100 + seed);
    const auto p = init_params(6, 10, seed);
    CHECK(max_grad_error(p, ds, v, w) <= 1e-4);
  }
  w.softplus_beta = 10;
  CHECK(max_grad_error(init_params(6, 10, 77), ds, random_vectors(ds, 6, 77), w) <= 1e-4);
}

TEST_CASE("gradient of the relational terms vanishes at the symmetric point") {
  const auto ds = builtin_dataset();
  ConceptVectors v;
  for (const auto& name : ds.train_vocabulary()) v[name] = Eigen::VectorXd::Zero(4);
  ProjectorParams p;
  p.w1 = Eigen::MatrixXd::Zero(6, 4);
  p.theta = Eigen::VectorXd::Zero(6);
  p.w2 = Eigen::MatrixXd::Zero(6, 6);
  LossWeights w;
  w.w_sep = w.w_density = w.w_antizero = w.w_ortho = 0;
  const auto g = grad(p, ds, v, w);
  CHECK(g.w1.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(g.theta.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(g.w2.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero weights give zero gradient") {
  const auto ds = builtin_dataset();
  const auto v = random_vectors(ds, 4, 8);
  LossWeights w{.w_isa = 0, .w_has = 0, .w_lsp = 0, .w_sep = 0, .w_density = 0,
                .w_antizero = 0, .w_ortho = 0};
  // ordering check rejects these weights, so build the problem directly
  // from a valid set and scale down to zero through the codes gradient
  CHECK_THROWS_AS(w.check(), ConfigError);
  LossWeights only_isa;
  only_isa.w_has = 2;
  only_isa.w_lsp = 2;
  only_isa.w_sep = only_isa.w_density = only_isa.w_antizero = only_isa.w_ortho = 0;
  ConstraintProblem problem(ds, v, only_isa);
  Eigen::MatrixXd z = Eigen::MatrixXd::Constant(5, static_cast<Eigen::Index>(problem.concept_names().size()), 0.3);
  Eigen::MatrixXd dz;
  problem.loss_of_codes(z, &dz);
  // codes untouched by any weighted term keep a zero gradient
  const auto& names = problem.concept_names();
  std::set<std::string> related;
  for (const auto& p : ds.train) {
    if (p.kind != RelationKind::Neg) {
      related.insert(p.a);
      related.insert(p.b);
    }
  }
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (!related.count(names[c])) CHECK(dz.col(static_cast<Eigen::Index>(c)).isZero(0));
  }
}

TEST_CASE("pair order does not change the loss bitwise") {
  auto ds = builtin_dataset();
  const auto v = random_vectors(ds, 6, 12);
  const auto p = init_params(6, 10, 12);
  const double before = loss_total(p, ds, v, LossWeights{}).total;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5; ++i) {
    std::shuffle(ds.train.begin(), ds.train.end(), rng);
    CHECK(loss_total(p, ds, v, LossWeights{}).total == before);
  }
}

TEST_CASE("planted codes satisfy the relational terms") {
  const auto ds = builtin_dataset();
  const auto po = plant_ontology(ds, 128, 7);
  oracle::Soft z;
  for (const auto& name : ds.train_vocabulary()) {
    const BitCode& c = po.codes.at(name);
    auto& col = z[name];
    for (std::size_t i = 0; i < c.size(); ++i) col.push_back(c.get(i) ? 0.98 : 0.02);
  }
  const auto t = oracle::loss_terms(z, ds, LossWeights{});
  CHECK(t.isa < 1e-3);
  CHECK(t.has < 1e-3);
  CHECK(t.lsp < 1e-3);
  // the library agrees with the oracle on the same codes
  ConceptVectors dummy;
  for (const auto& name : ds.train_vocabulary()) dummy[name] = Eigen::VectorXd::Zero(1);
  ConstraintProblem problem(ds, dummy, LossWeights{});
  Eigen::MatrixXd zm(128, static_cast<Eigen::Index>(problem.concept_names().size()));
  for (std::size_t c = 0; c < problem.concept_names().size(); ++c) {
    const auto& col = z.at(problem.concept_names()[c]);
    for (Eigen::Index i = 0; i < 128; ++i) zm(i, static_cast<Eigen::Index>(c)) = col[static_cast<std::size_t>(i)];
  }
  const auto l = problem.loss_of_codes(zm);
  CHECK(l.isa == doctest::Approx(t.isa).epsilon(1e-12));
  CHECK(l.lsp == doctest::Approx(t.lsp).epsilon(1e-12));
}

TEST_CASE("training reduces the loss and keeps the best checkpoint") {
  const auto ds = builtin_dataset();
  const auto v = random_vectors(ds, 16, 3);
  const auto init = init_params(16, 32, 3);
  TrainConfig cfg;
  cfg.max_steps = 300;
  const auto r = train(init, ds, v, LossWeights{}, cfg);
  REQUIRE(!r.history.empty());
  CHECK(r.best_loss < r.history.front().loss.total);
  for (const auto& s : r.history) CHECK(r.best_loss <= s.loss.total);
  CHECK(loss_total(r.best_params, ds, v, LossWeights{}).total == r.best_loss);
  CHECK(r.history[r.best_step].loss.total == r.best_loss);
}

TEST_CASE("zero learning rate leaves params unchanged") {
  const auto ds = builtin_dataset();
  const auto v = random_vectors(ds, 8, 5);
  const auto init = init_params(8, 12, 5);
  TrainConfig cfg;
  cfg.learning_rate = 0;
  cfg.max_steps = 20;
  const auto r = train(init, ds, v, LossWeights{}, cfg);
  CHECK(r.stop_reason == StopReason::MaxSteps);
  CHECK(r.best_params.w1 == init.w1);
  CHECK(r.best_params.w2 == init.w2);
  CHECK(r.best_params.theta == init.theta);
  CHECK(r.history.size() == 20);
}

TEST_CASE("a NaN input buckles with the pre-injection checkpoint") {
  const auto ds = builtin_dataset();
  auto v = random_vectors(ds, 8, 6);
  v.at("Beetle")[2] = std::numeric_limits<double>::quiet_NaN();
  const auto init = init_params(8, 12, 6);
  TrainConfig cfg;
  cfg.max_steps = 50;
  const auto r = train(init, ds, v, LossWeights{}, cfg);
  CHECK(r.stop_reason == StopReason::Buckled);
  CHECK(r.best_params.w1 == init.w1);
  CHECK(r.history.empty());
}

TEST_CASE("a diverging run is declared buckled") {
  const auto ds = builtin_dataset();
  const auto v = random_vectors(ds, 8, 7);
  TrainConfig cfg;
  cfg.learning_rate = 5.0;  // far too large: the loss jumps around
  cfg.max_steps = 400;
  cfg.buckling_window = 10;
  cfg.buckling_ratio = 1.05;
  const auto r = train(init_params(8, 12, 7), ds, v, LossWeights{}, cfg);
  CHECK(r.stop_reason == StopReason::Buckled);
  CHECK(r.history.size() < 400);
  for (const auto& s : r.history) CHECK(r.best_loss <= s.loss.total);
}

TEST_CASE("plateau scheduler halves the learning rate") {
  const auto ds = builtin_dataset();
  const auto v = random_vectors(ds, 4, 9);
  TrainConfig cfg;
  cfg.learning_rate = 0;  // loss never improves after step 0
  cfg.max_steps = 30;
  cfg.plateau_patience = 5;
  const auto r = train(init_params(4, 6, 9), ds, v, LossWeights{}, cfg);
  CHECK(r.history[0].learning_rate == 0);
  TrainConfig c2 = cfg;
  c2.learning_rate = 1e-12;
  const auto r2 = train(init_params(4, 6, 9), ds, v, LossWeights{}, c2);
  CHECK(r2.history.back().learning_rate < 1e-12);
  CHECK(r2.history.back().learning_rate >= 1e-12 * std::pow(0.5, 5));
}

TEST_CASE("training run directory layout") {
  oracle::TempDir tmp("trainrun");
  const auto ds = builtin_dataset();
  const auto v = random_vectors(ds, 4, 10);
  TrainConfig cfg;
  cfg.max_steps = 5;
  const auto r = train(init_params(4, 6, 10), ds, v, LossWeights{}, cfg);
  write_training_run(tmp.path / "run", r, LossWeights{}, cfg);
  CHECK(std::filesystem::exists(tmp.path / "run" / "config.json"));
  CHECK(std::filesystem::exists(tmp.path / "run" / "checkpoint" / "W1.f64"));
  const std::string csv = io::read_file(tmp.path / "run" / "history.csv");
  CHECK(csv.rfind("step,total,isa,has,lsp,sep,density,antizero,ortho,lr\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}
