#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "unlearn/losses.hpp"
#include "unlearn/model.hpp"
#include "unlearn/numerics.hpp"

namespace unlearn {

enum class StepMode { descent, ascent };
std::string to_string(StepMode mode);

struct SophiaHyper {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double gamma = 0.04;
  double epsilon = 1e-5;
  /// Elementwise clip bound on the preconditioned update. +inf disables it.
  double clip_threshold = 1.0;
  /// Refresh the Hessian EMA every this many steps.
  int hessian_interval = 1;
};

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Constant rate, or a per-step table (the last entry repeats once exhausted).
class LearningRateSchedule {
 public:
  LearningRateSchedule() = default;
  static LearningRateSchedule constant(double eta);
  static LearningRateSchedule table(std::vector<double> etas);

  /// Rate for 1-based step t.
  double at(std::uint64_t t) const;

 private:
  std::vector<double> etas_{1e-3};
};

/// Optimizer state shared by Sophia and AdamW. `h` is only touched by Sophia
/// and `v` only by AdamW.
struct OptimizerState {
  std::uint64_t t = 0;
  ParamVector m;
  ParamVector h;
  ParamVector v;
  SophiaHyper sophia;
  AdamWHyper adamw;
  LearningRateSchedule lr;

  static OptimizerState zeros(std::size_t dim, LearningRateSchedule lr = {}, SophiaHyper sophia = {},
                              AdamWHyper adamw = {});
};

struct StepResult {
  ParamVector theta;
  OptimizerState state;
};

/// Gauss-Newton style diagonal estimate g * g.
ParamVector estimate_hessian_diag(const ParamVector& g);

/// beta * prev + (1 - beta) * next.
ParamVector ema_update(const ParamVector& prev, const ParamVector& next, double beta);

/// theta - eta * g / H_diag. Throws if any curvature entry is <= 0.
ParamVector newton_step(const ParamVector& theta, const ParamVector& g, const ParamVector& h_diag, double eta);

/// Clipped diagonal second-order step:
///   m <- EMA(m, g, beta1); h <- EMA(h, g*g, beta2) on the refresh cadence;
///   theta' = theta -/+ eta_t * clip(m / max(gamma * h, eps), clip_threshold).
/// Ascent mode is descent on -g, so m and h always track the gradient of the
/// loss actually being minimized. `hessian_estimate`, when given, replaces
/// g*g as the fresh curvature sample.
StepResult sophia_step(const OptimizerState& state, const ParamVector& g, const ParamVector& theta,
                       StepMode mode = StepMode::descent, const ParamVector* hessian_estimate = nullptr);

/// AdamW with bias correction and decoupled weight decay. Ascent follows the
/// same sign convention as sophia_step.
StepResult adamw_step(const OptimizerState& state, const ParamVector& g, const ParamVector& theta,
                      double weight_decay = 0.0, StepMode mode = StepMode::descent);

// ---------------------------------------------------------------------------
// Unlearning runs

enum class OptimizerKind { fo, so };
std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

/// interleaved: GA/GradDiff take an ascent step on each forget batch followed
/// by a descent step on a lambda-scaled retain batch.
/// combined: one descent step per batch on the full loss gradient. PO and NPO
/// always run combined.
enum class Schedule { interleaved, combined };
std::string to_string(Schedule schedule);
Schedule parse_schedule(std::string_view name);

struct UnlearnTask {
  std::vector<Example> forget;
  std::vector<Example> retain;
  /// Reject-style responses PO draws y_f from.
  std::vector<TokenSequence> reject_pool;
  MethodConfig method;
};

struct RunConfig {
  OptimizerKind optimizer = OptimizerKind::so;
  Schedule schedule = Schedule::interleaved;
  LearningRateSchedule lr;
  int epochs = 5;
  std::size_t batch_size = 4;
  Seed seed{42};
  SophiaHyper sophia;
  AdamWHyper adamw;
  double weight_decay = 0.0;
};

struct StepRecord {
  std::uint64_t step = 0;
  int epoch = 0;
  StepMode mode = StepMode::descent;
  double loss = 0.0;
  double forget_nll = 0.0;
  /// NaN when the run has no retain data.
  double retain_nll = 0.0;
  double update_norm = 0.0;
};

struct RunResult {
  ParamVector final_params;
  /// epoch_params[0] is the starting point, epoch_params[e] the state after epoch e.
  std::vector<ParamVector> epoch_params;
  std::vector<StepRecord> steps;
};

/// Iterative unlearning from `start`. One epoch is a pass over the forget set
/// in a seeded shuffled order; retain batches are drawn cyclically from a
/// seeded shuffled retain order. Optimizer state (m, h / v) is shared by all
/// steps of the run. The retain gradient is scaled by lambda before it enters
/// the moving averages.
RunResult run_unlearning(const TinyLM& start, const UnlearnTask& task, const RunConfig& config);

/// Line-delimited trajectory log: '#' comment lines, a header line, then one
/// tab-separated record per step: step, mode, loss, forget_nll, retain_nll,
/// update_norm.
void write_trajectory_log(std::ostream& out, const RunResult& result, const std::string& note = {});

// ---------------------------------------------------------------------------
// Fine-tuning the model before unlearning

struct FinetuneConfig {
  double lr = 3e-3;
  std::size_t batch_size = 8;
  int max_epochs = 400;
  double target_nll = 0.05;
  Seed seed{42};
  AdamWHyper adamw;
};

struct FinetuneResult {
  TinyLM model;
  int epochs = 0;
  double final_nll = 0.0;
  bool converged = false;
};

/// AdamW descent on the mean NLL until the full-data mean NLL drops below
/// target_nll or max_epochs is reached.
FinetuneResult finetune(const TinyLM& start, const std::vector<Example>& data, const FinetuneConfig& config);

}  // namespace unlearn
