#include <cmath>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "unlearn/optim.hpp"

using namespace unlearn;
using namespace unlearn::testing;

namespace {

ParamVector random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  ParamVector v(n);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return v;
}

OptimizerState random_state(Rng& rng, std::size_t n) {
  OptimizerState s = OptimizerState::zeros(n, LearningRateSchedule::constant(rng.uniform(1e-4, 0.5)));
  s.t = rng.index(50);
  s.m = random_vector(rng, n, 2.0);
  s.h = random_vector(rng, n, 1.0);
  for (double& x : s.h) x = std::abs(x) * (rng.uniform() < 0.2 ? 0.0 : 1.0);
  s.v = s.h;
  return s;
}

// Toy memorize-then-forget task on a small model.
struct ToyTask {
  TinyLM model;
  UnlearnTask task;
};

ToyTask toy_task() {
  const ModelConfig cfg = small_mlp(8, 10);
  std::vector<Example> all = {{{1, 2}, {3, 4, 5}}, {{2, 1}, {6, 3, 4}}, {{3, 3}, {1, 6, 2}}, {{4, 1}, {5, 5, 2}},
                              {{5, 2}, {2, 4, 6}}, {{6, 4}, {4, 1, 3}}, {{1, 5}, {6, 6, 1}}, {{2, 6}, {3, 2, 5}}};
  FinetuneConfig fc;
  fc.lr = 0.02;
  fc.batch_size = 4;
  fc.max_epochs = 3000;
  fc.target_nll = 0.02;
  const FinetuneResult r = finetune(TinyLM::initialize(cfg, Seed{5}), all, fc);
  REQUIRE(r.converged);
  ToyTask out{r.model, {}};
  out.task.forget.assign(all.begin(), all.begin() + 2);
  out.task.retain.assign(all.begin() + 2, all.end());
  out.task.reject_pool = {{7, 7}};
  out.task.method = MethodConfig{Method::graddiff, 1.0, 1.0};
  return out;
}

}  // namespace

TEST_CASE("Hessian diagonal estimate") {
  CHECK(estimate_hessian_diag(ParamVector(3)) == ParamVector(3));
  CHECK(estimate_hessian_diag({1.0, -2.0, 0.5}) == ParamVector{1.0, 4.0, 0.25});
  Rng rng = Rng::stream(Seed{40}, "test");
  const ParamVector g = random_vector(rng, 10);
  const ParamVector h = estimate_hessian_diag(g);
  CHECK(h == estimate_hessian_diag(scale(g, -1.0)));
  for (double x : h) CHECK(x >= 0.0);
}

TEST_CASE("EMA update") {
  const ParamVector prev{1.0, 2.0}, next{3.0, -1.0};
  CHECK(ema_update(prev, next, 0.0) == next);
  CHECK(ema_update(prev, prev, 0.7) == prev);
  ParamVector m(1);
  const ParamVector x{2.0};
  for (int k = 1; k <= 30; ++k) {
    m = ema_update(m, x, 0.9);
    CHECK(2.0 - m[0] == doctest::Approx(2.0 * std::pow(0.9, k)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(ema_update(prev, next, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(ema_update(prev, ParamVector(3), 0.5), std::invalid_argument);
}

TEST_CASE("Sophia with a zero first moment leaves theta unchanged") {
  const OptimizerState s = OptimizerState::zeros(3, LearningRateSchedule::constant(0.1));
  const ParamVector theta{1.0, -2.0, 3.0};
  const StepResult r = sophia_step(s, ParamVector(3), theta);
  CHECK(r.theta == theta);
  CHECK(r.state.t == 1);
}

TEST_CASE("Sophia scalar case clips to the learning rate") {
  OptimizerState s = OptimizerState::zeros(1, LearningRateSchedule::constant(0.01));
  s.sophia.beta1 = 0.0;
  s.sophia.beta2 = 0.0;
  const ParamVector g{0.5};
  const ParamVector h{10.0};
  // m = 0.5, h = 10, gamma * h = 0.4, ratio 1.25 clipped to 1.
  const StepResult d = sophia_step(s, g, {2.0}, StepMode::descent, &h);
  CHECK(d.state.m[0] == 0.5);
  CHECK(d.state.h[0] == 10.0);
  CHECK(d.theta[0] == doctest::Approx(2.0 - 0.01).epsilon(1e-15));
  const StepResult a = sophia_step(s, g, {2.0}, StepMode::ascent, &h);
  CHECK(a.theta[0] == doctest::Approx(2.0 + 0.01).epsilon(1e-15));
}

TEST_CASE("Sophia degenerates to a Newton step") {
  Rng rng = Rng::stream(Seed{41}, "test");
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(6);
    ParamVector a = random_vector(rng, n, 3.0), hdiag(n), theta = random_vector(rng, n, 3.0);
    for (double& x : hdiag) x = rng.uniform(0.1, 5.0);
    // f = sum_i H_i (theta_i - a_i)^2 / 2
    ParamVector g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = hdiag[i] * (theta[i] - a[i]);
    OptimizerState s = OptimizerState::zeros(n, LearningRateSchedule::constant(1.0));
    s.sophia = SophiaHyper{0.0, 0.0, 1.0, 1e-300, std::numeric_limits<double>::infinity(), 1};
    const StepResult r = sophia_step(s, g, theta, StepMode::descent, &hdiag);
    const ParamVector newton = newton_step(theta, g, hdiag, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(r.theta[i] - newton[i]) <= 1e-10);
      CHECK(std::abs(newton[i] - a[i]) <= 1e-10);
    }
  }
}

TEST_CASE("Newton step") {
  for (double theta0 : {-5.0, 0.0, 2.5}) {
    const double a = 1.25;
    CHECK(newton_step({theta0}, {theta0 - a}, {1.0}, 1.0)[0] == a);
  }
  CHECK(newton_step({1.0, 2.0}, ParamVector(2), {3.0, 4.0}, 0.5) == ParamVector{1.0, 2.0});
  // f = (2 (x - 1)^2 + 8 (y + 2)^2) / 2 from (4, 3).
  const ParamVector theta{4.0, 3.0};
  const ParamVector g{2.0 * 3.0, 8.0 * 5.0};
  const ParamVector out = newton_step(theta, g, {2.0, 8.0}, 1.0);
  CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(-2.0).epsilon(1e-15));
  CHECK_THROWS_AS(newton_step({1.0}, {1.0}, {0.0}, 1.0), std::domain_error);
  CHECK_THROWS_AS(newton_step({1.0}, {1.0}, {-1.0}, 1.0), std::domain_error);
  CHECK_THROWS_AS(newton_step({1.0}, {1.0, 2.0}, {1.0}, 1.0), std::invalid_argument);
}

TEST_CASE("AdamW basic behavior") {
  OptimizerState s = OptimizerState::zeros(3, LearningRateSchedule::constant(0.01));
  ParamVector theta{1.0, -1.0, 0.5};
  for (int k = 0; k < 5; ++k) {
    const StepResult r = adamw_step(s, ParamVector(3), theta);
    CHECK(r.theta == theta);
    s = r.state;
  }
  const OptimizerState fresh = OptimizerState::zeros(3, LearningRateSchedule::constant(0.01));
  const StepResult first = adamw_step(fresh, {3.0, -0.2, 40.0}, theta);
  CHECK(first.theta[0] - theta[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(first.theta[1] - theta[1] == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(first.theta[2] - theta[2] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK_THROWS_AS(adamw_step(fresh, ParamVector(2), theta), std::invalid_argument);
}

TEST_CASE("AdamW matches an independent reference on a quadratic") {
  OptimizerState s = OptimizerState::zeros(1, LearningRateSchedule::constant(0.1));
  ParamVector theta{0.0};
  // Reference: textbook Adam with bias correction.
  double x = 0.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    const StepResult r = adamw_step(s, {theta[0] - 3.0}, theta);
    theta = r.theta;
    s = r.state;
    const double g = x - 3.0;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.1 * (m / (1.0 - std::pow(0.9, t))) / (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
    CHECK(theta[0] == doctest::Approx(x).epsilon(1e-12));
  }
  CHECK(std::abs(theta[0] - 3.0) < 0.05);
}

TEST_CASE("AdamW decoupled weight decay") {
  const OptimizerState s = OptimizerState::zeros(1, LearningRateSchedule::constant(0.1));
  const StepResult r = adamw_step(s, {0.0}, {2.0}, 0.5);
  CHECK(r.theta[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-15));
}

TEST_CASE("Sophia update never exceeds the learning rate per coordinate") {
  Rng rng = Rng::stream(Seed{42}, "test");
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.index(8);
    const OptimizerState s = random_state(rng, n);
    const ParamVector theta = random_vector(rng, n, 5.0);
    const ParamVector g = random_vector(rng, n, std::pow(10.0, rng.uniform(-4.0, 3.0)));
    const StepMode mode = rng.uniform() < 0.5 ? StepMode::ascent : StepMode::descent;
    const StepResult r = sophia_step(s, g, theta, mode);
    const double eta = r.state.lr.at(r.state.t);
    // theta' is rounded once, so the measured step may exceed eta by one ulp of theta'.
    for (std::size_t i = 0; i < n; ++i) {
      const double ulp = std::nextafter(std::abs(r.theta[i]), std::numeric_limits<double>::infinity()) - std::abs(r.theta[i]);
      CHECK(std::abs(r.theta[i] - theta[i]) <= eta + ulp);
    }
    for (double h : r.state.h) CHECK(h >= 0.0);
    CHECK(r.state.t == s.t + 1);
  }
}

TEST_CASE("ascent on g is descent on -g bitwise") {
  Rng rng = Rng::stream(Seed{43}, "test");
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(8);
    const OptimizerState s = random_state(rng, n);
    const ParamVector theta = random_vector(rng, n, 5.0);
    const ParamVector g = random_vector(rng, n, 3.0);
    const StepResult a = sophia_step(s, g, theta, StepMode::ascent);
    const StepResult d = sophia_step(s, scale(g, -1.0), theta, StepMode::descent);
    CHECK(a.theta == d.theta);
    CHECK(a.state.m == d.state.m);
    CHECK(a.state.h == d.state.h);
    const StepResult aa = adamw_step(s, g, theta, 0.01, StepMode::ascent);
    const StepResult ad = adamw_step(s, scale(g, -1.0), theta, 0.01, StepMode::descent);
    CHECK(aa.theta == ad.theta);
  }
}

TEST_CASE("Hessian refresh cadence") {
  OptimizerState s = OptimizerState::zeros(1, LearningRateSchedule::constant(0.01));
  s.sophia.hessian_interval = 3;
  ParamVector theta{0.0};
  std::vector<double> hs;
  for (int k = 0; k < 6; ++k) {
    const StepResult r = sophia_step(s, {1.0}, theta);
    hs.push_back(r.state.h[0]);
    s = r.state;
    theta = r.theta;
  }
  CHECK(hs[0] > 0.0);
  CHECK(hs[1] == hs[0]);
  CHECK(hs[2] == hs[0]);
  CHECK(hs[3] > hs[0]);
  CHECK(hs[4] == hs[3]);
}

TEST_CASE("learning-rate table") {
  const LearningRateSchedule lr = LearningRateSchedule::table({0.3, 0.2, 0.1});
  CHECK(lr.at(1) == 0.3);
  CHECK(lr.at(3) == 0.1);
  CHECK(lr.at(10) == 0.1);
  CHECK_THROWS_AS(LearningRateSchedule::table({}), std::invalid_argument);
  CHECK_THROWS_AS(LearningRateSchedule::table({-1.0}), std::invalid_argument);
}

TEST_CASE("zero epochs returns the start unchanged") {
  Rng rng = Rng::stream(Seed{44}, "test");
  const TinyLM m = random_model(rng, small_mlp());
  UnlearnTask task;
  task.forget = random_batch(rng, 6, 3);
  task.retain = random_batch(rng, 6, 3);
  RunConfig rc;
  rc.epochs = 0;
  const RunResult r = run_unlearning(m, task, rc);
  CHECK(r.final_params == m.params);
  CHECK(r.steps.empty());
  CHECK(r.epoch_params.size() == 1);
}

TEST_CASE("combined GradDiff with forget equal to retain never moves") {
  Rng rng = Rng::stream(Seed{45}, "test");
  const TinyLM m = random_model(rng, small_mlp());
  UnlearnTask task;
  task.forget = random_batch(rng, 6, 1);
  task.retain = task.forget;
  task.method = MethodConfig{Method::graddiff, 1.0, 1.0};
  RunConfig rc;
  rc.schedule = Schedule::combined;
  rc.epochs = 3;
  rc.batch_size = 1;
  rc.lr = LearningRateSchedule::constant(0.1);
  for (OptimizerKind kind : {OptimizerKind::so, OptimizerKind::fo}) {
    rc.optimizer = kind;
    const RunResult r = run_unlearning(m, task, rc);
    CHECK(r.final_params == m.params);
    CHECK(r.steps.size() == 3);
  }
}

TEST_CASE("toy second-order run forgets while keeping the retain NLL close") {
  const ToyTask toy = toy_task();
  UnlearnTask task = toy.task;
  task.method.lambda = 4.0;
  RunConfig rc;
  rc.epochs = 8;
  rc.batch_size = 2;
  rc.lr = LearningRateSchedule::constant(0.01);
  const RunResult r = run_unlearning(toy.model, task, rc);
  REQUIRE(r.epoch_params.size() == 9);
  double prev_forget = -1.0;
  TinyLM probe = toy.model;
  const double retain_start = batch_nll(toy.model, toy.task.retain);
  for (const auto& p : r.epoch_params) {
    probe.params = p;
    const double f = batch_nll(probe, toy.task.forget);
    CHECK(f >= prev_forget);
    CHECK(batch_nll(probe, toy.task.retain) <= 1.2 * retain_start + 1e-12);
    prev_forget = f;
  }
  CHECK(prev_forget > 0.5);
  for (const auto& s : r.steps) {
    CHECK(std::isfinite(s.loss));
    CHECK(std::isfinite(s.retain_nll));
  }
  CHECK(r.steps.front().mode == StepMode::ascent);
  CHECK(r.steps[1].mode == StepMode::descent);
}

TEST_CASE("unlearning runs are deterministic and the log is parseable") {
  const ToyTask toy = toy_task();
  for (Method method : {Method::graddiff, Method::po, Method::npo}) {
    UnlearnTask task = toy.task;
    task.method.method = method;
    RunConfig rc;
    rc.epochs = 2;
    rc.batch_size = 1;
    rc.lr = LearningRateSchedule::constant(0.005);
    const RunResult a = run_unlearning(toy.model, task, rc), b = run_unlearning(toy.model, task, rc);
    CHECK(a.final_params == b.final_params);
    std::ostringstream la, lb;
    write_trajectory_log(la, a, "note");
    write_trajectory_log(lb, b, "note");
    CHECK(la.str() == lb.str());
    std::istringstream in(la.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "# note");
    std::getline(in, line);
    CHECK(line == "step\tmode\tloss\tforget_nll\tretain_nll\tupdate_norm");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      CHECK(std::count(line.begin(), line.end(), '\t') == 5);
    }
    CHECK(rows == a.steps.size());
    if (method != Method::graddiff) {
      for (const auto& s : a.steps) CHECK(s.mode == StepMode::descent);
    }
  }
}

TEST_CASE("run preconditions") {
  Rng rng = Rng::stream(Seed{46}, "test");
  const TinyLM m = random_model(rng, small_mlp());
  UnlearnTask task;
  RunConfig rc;
  CHECK_THROWS_AS(run_unlearning(m, task, rc), std::invalid_argument);
  task.forget = random_batch(rng, 6, 2);
  CHECK_THROWS_AS(run_unlearning(m, task, rc), std::invalid_argument);
  task.method.method = Method::po;
  task.method.lambda = 0.0;
  CHECK_THROWS_AS(run_unlearning(m, task, rc), std::invalid_argument);
  task.method.method = Method::ga;
  CHECK_NOTHROW(run_unlearning(m, task, rc));
  CHECK(parse_optimizer("fo") == OptimizerKind::fo);
  CHECK(parse_schedule("combined") == Schedule::combined);
  CHECK_THROWS_AS(parse_schedule("x"), std::invalid_argument);
}
