#include "unlearn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace unlearn {

namespace {

void require_dims(const OptimizerState& state, const ParamVector& g, const ParamVector& theta) {
  const std::size_t d = theta.dim();
  if (g.dim() != d || state.m.dim() != d || state.h.dim() != d || state.v.dim() != d) {
    throw std::invalid_argument("optimizer step: dimension mismatch between state, gradient and parameters");
  }
}

ParamVector signed_gradient(const ParamVector& g, StepMode mode) {
  return mode == StepMode::ascent ? scale(g, -1.0) : g;
}

std::vector<Example> gather(const std::vector<Example>& items, const std::vector<std::size_t>& order, std::size_t begin,
                            std::size_t count) {
  std::vector<Example> out;
  out.reserve(count);
  for (std::size_t i = begin; i < begin + count; ++i) out.push_back(items[order[i]]);
  return out;
}

std::vector<std::size_t> iota_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  return order;
}

/// Cycles through the retain set in seeded shuffled passes.
class RetainCursor {
 public:
  RetainCursor(const std::vector<Example>& items, Seed seed)
      : items_(items), rng_(Rng::stream(seed, "retain_shuffle")), order_(iota_order(items.size())) {
    rng_.shuffle(order_);
  }

  std::vector<Example> next(std::size_t count) {
    std::vector<Example> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count && !items_.empty(); ++i) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(items_[order_[pos_++]]);
    }
    return out;
  }

 private:
  const std::vector<Example>& items_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

double update_norm(const ParamVector& before, const ParamVector& after) {
  double s = 0.0;
  for (std::size_t i = 0; i < before.dim(); ++i) {
    const double d = after[i] - before[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

std::string to_string(StepMode mode) { return mode == StepMode::ascent ? "ascent" : "descent"; }

LearningRateSchedule LearningRateSchedule::constant(double eta) { return table({eta}); }

LearningRateSchedule LearningRateSchedule::table(std::vector<double> etas) {
  if (etas.empty()) throw std::invalid_argument("learning-rate table is empty");
  for (double e : etas) {
    if (!(e >= 0.0) || !std::isfinite(e)) throw std::invalid_argument("learning rates must be finite and nonnegative");
  }
  LearningRateSchedule s;
  s.etas_ = std::move(etas);
  return s;
}

double LearningRateSchedule::at(std::uint64_t t) const {
  const std::size_t idx = t == 0 ? 0 : static_cast<std::size_t>(t - 1);
  return etas_[std::min(idx, etas_.size() - 1)];
}

OptimizerState OptimizerState::zeros(std::size_t dim, LearningRateSchedule lr, SophiaHyper sophia, AdamWHyper adamw) {
  OptimizerState s;
  s.m = ParamVector(dim);
  s.h = ParamVector(dim);
  s.v = ParamVector(dim);
  s.sophia = sophia;
  s.adamw = adamw;
  s.lr = std::move(lr);
  return s;
}

ParamVector estimate_hessian_diag(const ParamVector& g) { return hadamard(g, g); }

ParamVector ema_update(const ParamVector& prev, const ParamVector& next, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("EMA beta must lie in [0, 1)");
  if (prev.dim() != next.dim()) throw std::invalid_argument("ema_update: dimension mismatch");
  ParamVector out(prev.dim());
  for (std::size_t i = 0; i < prev.dim(); ++i) out[i] = beta * prev[i] + (1.0 - beta) * next[i];
  return out;
}

ParamVector newton_step(const ParamVector& theta, const ParamVector& g, const ParamVector& h_diag, double eta) {
  if (theta.dim() != g.dim() || theta.dim() != h_diag.dim()) throw std::invalid_argument("newton_step: dimension mismatch");
  ParamVector out(theta.dim());
  for (std::size_t i = 0; i < theta.dim(); ++i) {
    if (!(h_diag[i] > 0.0)) {
      throw std::domain_error("newton_step: nonpositive curvature at coordinate " + std::to_string(i) +
                              "; damp the Hessian first");
    }
    out[i] = theta[i] - eta * (g[i] / h_diag[i]);
  }
  return out;
}

StepResult sophia_step(const OptimizerState& state, const ParamVector& g, const ParamVector& theta, StepMode mode,
                       const ParamVector* hessian_estimate) {
  require_dims(state, g, theta);
  const SophiaHyper& hp = state.sophia;
  if (hp.hessian_interval < 1) throw std::invalid_argument("hessian_interval must be >= 1");
  StepResult out{theta, state};
  OptimizerState& s = out.state;
  const ParamVector grad = signed_gradient(g, mode);

  s.t += 1;
  s.m = ema_update(state.m, grad, hp.beta1);
  if ((s.t - 1) % static_cast<std::uint64_t>(hp.hessian_interval) == 0) {
    if (hessian_estimate != nullptr) {
      if (hessian_estimate->dim() != theta.dim()) throw std::invalid_argument("hessian estimate dimension mismatch");
      for (double x : *hessian_estimate) {
        if (!(x >= 0.0)) throw std::invalid_argument("hessian estimate must be nonnegative");
      }
      s.h = ema_update(state.h, *hessian_estimate, hp.beta2);
    } else {
      s.h = ema_update(state.h, estimate_hessian_diag(grad), hp.beta2);
    }
  }

  const double eta = s.lr.at(s.t);
  const double c = hp.clip_threshold;
  for (std::size_t i = 0; i < theta.dim(); ++i) {
    const double ratio = s.m[i] / std::max(hp.gamma * s.h[i], hp.epsilon);
    const double u = std::max(std::min(ratio, c), -c);
    out.theta[i] = theta[i] - eta * u;
  }
  require_finite(out.theta, "sophia_step");
  return out;
}

StepResult adamw_step(const OptimizerState& state, const ParamVector& g, const ParamVector& theta, double weight_decay,
                      StepMode mode) {
  require_dims(state, g, theta);
  const AdamWHyper& hp = state.adamw;
  StepResult out{theta, state};
  OptimizerState& s = out.state;
  const ParamVector grad = signed_gradient(g, mode);

  s.t += 1;
  const double eta = s.lr.at(s.t);
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < theta.dim(); ++i) {
    s.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * grad[i];
    s.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
    const double m_hat = s.m[i] / bc1;
    const double v_hat = s.v[i] / bc2;
    double p = theta[i];
    p -= eta * weight_decay * p;
    p -= eta * m_hat / (std::sqrt(v_hat) + hp.epsilon);
    out.theta[i] = p;
  }
  require_finite(out.theta, "adamw_step");
  return out;
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::so ? "so" : "fo"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "so") return OptimizerKind::so;
  if (name == "fo") return OptimizerKind::fo;
  throw std::invalid_argument("unknown optimizer: " + std::string(name));
}

std::string to_string(Schedule schedule) { return schedule == Schedule::combined ? "combined" : "interleaved"; }

Schedule parse_schedule(std::string_view name) {
  if (name == "interleaved") return Schedule::interleaved;
  if (name == "combined") return Schedule::combined;
  throw std::invalid_argument("unknown schedule: " + std::string(name));
}

RunResult run_unlearning(const TinyLM& start, const UnlearnTask& task, const RunConfig& config) {
  start.validate();
  task.method.validate();
  if (config.epochs < 0) throw std::invalid_argument("epochs must be nonnegative");
  if (config.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (task.forget.empty()) throw std::invalid_argument("forget set must be non-empty");
  const Method method = task.method.method;
  const double lambda = method == Method::ga ? 0.0 : task.method.lambda;
  if (lambda > 0.0 && task.retain.empty()) throw std::invalid_argument("retain set must be non-empty when lambda > 0");
  if (method == Method::po && task.reject_pool.empty()) throw std::invalid_argument("PO requires a reject-answer pool");

  const bool ascent_descent =
      config.schedule == Schedule::interleaved && (method == Method::ga || method == Method::graddiff);
  const bool use_retain = lambda > 0.0;
  const ReferenceModel reference(start);

  TinyLM model = start;
  OptimizerState state = OptimizerState::zeros(start.params.dim(), config.lr, config.sophia, config.adamw);
  RunResult result;
  result.epoch_params.push_back(start.params);

  Rng forget_rng = Rng::stream(config.seed, "shuffle");
  Rng target_rng = Rng::stream(config.seed, "po_targets");
  RetainCursor retain_cursor(task.retain, config.seed);
  std::vector<std::size_t> order = iota_order(task.forget.size());

  auto apply = [&](const ParamVector& g, StepMode mode, int epoch, double loss, double forget_nll, double retain_nll) {
    StepResult next = config.optimizer == OptimizerKind::so ? sophia_step(state, g, model.params, mode)
                                                            : adamw_step(state, g, model.params, config.weight_decay, mode);
    StepRecord rec;
    rec.step = next.state.t;
    rec.epoch = epoch;
    rec.mode = mode;
    rec.loss = loss;
    rec.forget_nll = forget_nll;
    rec.retain_nll = retain_nll;
    rec.update_norm = update_norm(model.params, next.theta);
    result.steps.push_back(rec);
    model.params = std::move(next.theta);
    state = std::move(next.state);
  };

  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    forget_rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      UnlearnBatch batch;
      batch.forget = gather(task.forget, order, begin, std::min(config.batch_size, order.size() - begin));
      if (use_retain) batch.retain = retain_cursor.next(config.batch_size);

      if (ascent_descent) {
        // Ascent on the forget NLL, then descent on lambda * retain NLL.
        const ParamVector g_forget = grad_sequence_nll(model, batch.forget);
        const double forget_nll = batch_nll(model, batch.forget);
        const double retain_nll = use_retain ? batch_nll(model, batch.retain) : kNaN;
        apply(g_forget, StepMode::ascent, epoch, -forget_nll, forget_nll, retain_nll);
        if (use_retain) {
          const ParamVector g_retain = scale(grad_sequence_nll(model, batch.retain), lambda);
          const double retain_now = batch_nll(model, batch.retain);
          apply(g_retain, StepMode::descent, epoch, lambda * retain_now, batch_nll(model, batch.forget), retain_now);
        }
        continue;
      }

      if (method == Method::po) {
        std::vector<TokenSequence> targets;
        targets.reserve(batch.forget.size());
        for (std::size_t i = 0; i < batch.forget.size(); ++i) {
          targets.push_back(task.reject_pool[target_rng.index(task.reject_pool.size())]);
        }
        batch.forget_targets = std::move(targets);
      }
      MethodConfig mc = task.method;
      mc.lambda = lambda;
      const LossValue loss = unlearning_loss(model, &reference, batch, mc);
      const double forget_nll = batch_nll(model, batch.forget);
      const double retain_nll = use_retain ? loss.retain_term : kNaN;
      apply(loss.grad, StepMode::descent, epoch, loss.value, forget_nll, retain_nll);
    }
    result.epoch_params.push_back(model.params);
  }
  result.final_params = model.params;
  return result;
}

void write_trajectory_log(std::ostream& out, const RunResult& result, const std::string& note) {
  if (!note.empty()) out << "# " << note << '\n';
  out << "step\tmode\tloss\tforget_nll\tretain_nll\tupdate_norm\n";
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::setprecision(17);
  for (const StepRecord& r : result.steps) {
    out << r.step << '\t' << to_string(r.mode) << '\t' << r.loss << '\t' << r.forget_nll << '\t' << r.retain_nll << '\t'
        << r.update_norm << '\n';
  }
  out.flags(flags);
  out.precision(prec);
}

FinetuneResult finetune(const TinyLM& start, const std::vector<Example>& data, const FinetuneConfig& config) {
  if (data.empty()) throw std::invalid_argument("finetune: empty training set");
  if (config.batch_size == 0) throw std::invalid_argument("finetune: batch_size must be positive");
  FinetuneResult out{start, 0, batch_nll(start, data), false};
  OptimizerState state =
      OptimizerState::zeros(start.params.dim(), LearningRateSchedule::constant(config.lr), {}, config.adamw);
  Rng rng = Rng::stream(config.seed, "finetune_shuffle");
  std::vector<std::size_t> order = iota_order(data.size());
  while (out.final_nll >= config.target_nll && out.epochs < config.max_epochs) {
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const auto batch = gather(data, order, begin, std::min(config.batch_size, order.size() - begin));
      StepResult next = adamw_step(state, grad_sequence_nll(out.model, batch), out.model.params);
      out.model.params = std::move(next.theta);
      state = std::move(next.state);
    }
    ++out.epochs;
    out.final_nll = batch_nll(out.model, data);
  }
  out.converged = out.final_nll < config.target_nll;
  return out;
}

}  // namespace unlearn
