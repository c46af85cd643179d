#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "unlearn/influence.hpp"
#include "unlearn/optim.hpp"

using namespace unlearn;
using namespace unlearn::testing;

namespace {

std::vector<std::size_t> pick_forget(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  rng.shuffle(all);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

double max_diff(const ParamVector& a, const ParamVector& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_CASE("weighted loss") {
  Rng rng = Rng::stream(Seed{60}, "test");
  const QuadraticInstance inst = QuadraticInstance::random(rng, 3, 6, 2);
  ParamVector theta{0.3, -1.0, 2.0};
  double full = 0.0;
  for (const auto& t : inst.terms) full += term_loss(theta, t);
  CHECK(weighted_loss(theta, DataWeights::ones(6), inst) == doctest::Approx(full).epsilon(1e-14));
  CHECK(weighted_loss(theta, DataWeights{std::vector<double>(6, 0.0)}, inst) == 0.0);
  const std::vector<std::size_t> forget = {1, 4};
  double retain = 0.0;
  for (std::size_t i : complement_indices(6, forget)) {
    const auto& t = inst.terms[i];
    for (std::size_t r = 0; r < t.rows; ++r) {
      double res = -t.b[r];
      for (std::size_t c = 0; c < 3; ++c) res += t.a[r * 3 + c] * theta[c];
      retain += 0.5 * res * res;
    }
  }
  CHECK(weighted_loss(theta, DataWeights::retain_indicator(6, forget), inst) == doctest::Approx(retain).epsilon(1e-14));
  CHECK_THROWS_AS(weighted_loss(theta, DataWeights::ones(5), inst), std::invalid_argument);
  const DataWeights bad{{0.5, 1.5}};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK(DataWeights::retain_indicator(4, {2}).complement().w == std::vector<double>{0.0, 0.0, 1.0, 0.0});
}

TEST_CASE("weighted gradient and Hessian agree with finite differences") {
  Rng rng = Rng::stream(Seed{61}, "test");
  const QuadraticInstance inst = QuadraticInstance::random(rng, 4, 7, 2);
  DataWeights w;
  for (int i = 0; i < 7; ++i) w.w.push_back(rng.uniform());
  const ParamVector theta{0.1, 0.2, -0.3, 0.4};
  const ParamVector g = weighted_gradient(theta, w, inst);
  const ParamVector numeric = finite_diff_gradient([&](const ParamVector& p) { return weighted_loss(p, w, inst); }, theta, 1e-5);
  CHECK(relative_error(g, numeric) < 1e-8);
  const DenseMatrix h = weighted_hessian(w, inst);
  for (std::size_t c = 0; c < 4; ++c) {
    ParamVector e(4);
    e[c] = 1.0;
    const ParamVector dg = subtract(weighted_gradient(add(theta, e), w, inst), g);
    for (std::size_t r = 0; r < 4; ++r) CHECK(h(r, c) == doctest::Approx(dg[r]).epsilon(1e-10));
  }
}

TEST_CASE("one-dimensional instance") {
  const QuadraticInstance inst = QuadraticInstance::one_dimensional({1.0, 3.0});
  const ParamVector theta_o = full_training_minimizer(inst);
  CHECK(theta_o[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(weighted_gradient(theta_o, DataWeights{{0.0, 1.0}}, inst)[0] == doctest::Approx(-1.0).epsilon(1e-15));
  const ParamVector retrained = exact_retrain_oracle(inst, {0});
  CHECK(retrained[0] == doctest::Approx(1.0).epsilon(1e-15));
  const ParamVector mu = influence_unlearn(theta_o, inst, {1}, InfluenceOptions{0.0});
  CHECK(std::abs(mu[0] - retrained[0]) <= 1e-12);
  CHECK(std::abs(mu[0] - 1.0) <= 1e-12);
}

TEST_CASE("empty forget set returns theta_o exactly") {
  Rng rng = Rng::stream(Seed{62}, "test");
  const QuadraticInstance inst = QuadraticInstance::random(rng, 5, 20);
  const ParamVector theta_o = full_training_minimizer(inst);
  CHECK(influence_unlearn(theta_o, inst, {}) == theta_o);
  const ParamVector oracle = exact_retrain_oracle(inst, complement_indices(20, {}));
  CHECK(max_diff(oracle, theta_o) == 0.0);
  const RunResult so = run_unlearning(TinyLM::zeros(small_linear()), UnlearnTask{{{{0}, {1}}}, {}, {}, {Method::ga, 0.0, 1.0}},
                                        RunConfig{OptimizerKind::so, Schedule::interleaved, {}, 0, 4, Seed{1}, {}, {}, 0.0});
  CHECK(so.final_params == TinyLM::zeros(small_linear()).params);
}

TEST_CASE("influence update is exact on random least squares") {
  Rng rng = Rng::stream(Seed{63}, "test");
  for (int trial = 0; trial < 10; ++trial) {
    const QuadraticInstance inst = QuadraticInstance::random(rng, 5, 20);
    const auto forget = pick_forget(rng, 20, 4);
    const ParamVector theta_o = full_training_minimizer(inst);
    const ParamVector mu = influence_unlearn(theta_o, inst, forget, InfluenceOptions{0.0});
    const ParamVector oracle = exact_retrain_oracle(inst, complement_indices(20, forget));
    CHECK(max_diff(mu, oracle) <= 1e-8);
    CHECK(norm2(weighted_gradient(oracle, DataWeights::retain_indicator(20, forget), inst)) < 1e-10);
  }
}

TEST_CASE("the 1/N Hessian variant is exact only in the symmetric 1-D case") {
  const QuadraticInstance inst = QuadraticInstance::one_dimensional({1.0, 3.0});
  InfluenceOptions opts{0.0, HessianSource::mean};
  CHECK(influence_unlearn(full_training_minimizer(inst), inst, {1}, opts)[0] == doctest::Approx(1.0).epsilon(1e-15));
  const QuadraticInstance three = QuadraticInstance::one_dimensional({1.0, 3.0, 8.0});
  const ParamVector theta_o = full_training_minimizer(three);
  const double mean_variant = influence_unlearn(theta_o, three, {2}, opts)[0];
  CHECK(std::abs(mean_variant - 2.0) > 1e-3);
  CHECK(influence_unlearn(theta_o, three, {2}, InfluenceOptions{0.0})[0] == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("influence preconditions") {
  Rng rng = Rng::stream(Seed{64}, "test");
  const QuadraticInstance inst = QuadraticInstance::random(rng, 3, 8);
  const ParamVector theta_o = full_training_minimizer(inst);
  CHECK_THROWS_AS(influence_unlearn(add(theta_o, ParamVector{0.1, 0.0, 0.0}), inst, {0}), std::invalid_argument);
  CHECK_THROWS_AS(influence_unlearn(theta_o, inst, {0}, InfluenceOptions{-1.0}), std::invalid_argument);
  CHECK_THROWS_AS(influence_unlearn(theta_o, inst, {9}), std::out_of_range);
  CHECK_THROWS_AS(influence_unlearn(theta_o, inst, {1, 1}), std::invalid_argument);

  // Two terms that both only see the first coordinate: the retain problem is singular.
  QuadraticInstance flat;
  flat.dim = 2;
  flat.terms = {{1, {1.0, 0.0}, {1.0}}, {1, {1.0, 0.0}, {3.0}}, {1, {0.0, 1.0}, {2.0}}};
  CHECK_THROWS_AS(exact_retrain_oracle(flat, {0, 1}), std::domain_error);
  const ParamVector flat_o = full_training_minimizer(flat);
  try {
    influence_unlearn(flat_o, flat, {2}, InfluenceOptions{0.0});
    FAIL("expected an error");
  } catch (const std::domain_error& e) {
    CHECK(std::string(e.what()).find("damping") != std::string::npos);
  }
  CHECK_NOTHROW(influence_unlearn(flat_o, flat, {2}, InfluenceOptions{1e-3}));
}

TEST_CASE("larger damping shrinks the update on a diagonal instance") {
  QuadraticInstance inst;
  inst.dim = 3;
  Rng rng = Rng::stream(Seed{65}, "test");
  for (int i = 0; i < 12; ++i) {
    const std::size_t c = static_cast<std::size_t>(i % 3);
    QuadraticTerm t{1, {0.0, 0.0, 0.0}, {rng.normal()}};
    t.a[c] = rng.uniform(0.5, 2.0);
    inst.terms.push_back(t);
  }
  const ParamVector theta_o = full_training_minimizer(inst);
  const std::vector<std::size_t> forget = {0, 4};
  double prev = std::numeric_limits<double>::infinity();
  for (double damping : {0.0, 0.1, 1.0, 10.0, 100.0, 1e4, 1e8}) {
    const double norm = norm2(subtract(influence_unlearn(theta_o, inst, forget, InfluenceOptions{damping}), theta_o));
    CHECK(norm <= prev);
    prev = norm;
  }
  CHECK(prev < 1e-6);
}

TEST_CASE("default damping") {
  DenseMatrix h{2, {4.0, 1.0, 1.0, 6.0}};
  CHECK(h.trace() == 10.0);
  CHECK(default_damping(h) == doctest::Approx(1e-4 * 5.0).epsilon(1e-15));
}

TEST_CASE("influence update on the toy model is finite") {
  Rng rng = Rng::stream(Seed{66}, "test");
  for (int trial = 0; trial < 5; ++trial) {
    const TinyLM m = random_model(rng, small_mlp());
    const auto forget = random_batch(rng, 6, 2), retain = random_batch(rng, 6, 5);
    for (HessianSource src : {HessianSource::retain, HessianSource::mean}) {
      LmInfluenceOptions opts;
      opts.hessian = src;
      const TinyLM out = influence_unlearn_lm(m, forget, retain, opts);
      CHECK(out.params.all_finite());
      CHECK(out.params != m.params);
    }
    CHECK(influence_unlearn_lm(m, {}, retain).params == m.params);
  }
}

TEST_CASE("influence against Sophia on quadratics") {
  Rng rng = Rng::stream(Seed{67}, "test");
  const QuadraticInstance inst = QuadraticInstance::random(rng, 4, 16);
  const auto forget = pick_forget(rng, 16, 3);
  const ComparisonReport report = influence_vs_sophia_report(inst, forget, 2000, 0.05);
  const ComparisonRow& retrain = report.row("retrain");
  for (const char* name : {"iu", "sophia"}) {
    CHECK(std::abs(report.row(name).forget_objective - retrain.forget_objective) <= 1e-6);
    CHECK(std::abs(report.row(name).retain_objective - retrain.retain_objective) <= 1e-6);
  }
  CHECK(report.row("original").retain_objective >= retrain.retain_objective);
  const std::string csv = report.to_csv();
  CHECK(csv.rfind("method,forget_objective,retain_objective,forget_acc,retain_acc\n", 0) == 0);
  CHECK_THROWS_AS(report.row("nope"), std::out_of_range);
}
