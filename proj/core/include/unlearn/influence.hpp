#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "unlearn/model.hpp"
#include "unlearn/numerics.hpp"

namespace unlearn {

/// Per-example weights of the training objective, each in [0, 1].
struct DataWeights {
  std::vector<double> w;

  static DataWeights ones(std::size_t n);
  /// 1 on retained examples, 0 on forgotten ones.
  static DataWeights retain_indicator(std::size_t n, const std::vector<std::size_t>& forget);
  /// Elementwise 1 - w.
  DataWeights complement() const;
  void validate() const;
};

/// One least-squares term l_i(theta) = |A theta - b|^2 / 2 with A stored
/// row-major, rows x dim.
struct QuadraticTerm {
  std::size_t rows = 0;
  std::vector<double> a;
  std::vector<double> b;
};

struct QuadraticInstance {
  std::size_t dim = 0;
  std::vector<QuadraticTerm> terms;

  std::size_t size() const { return terms.size(); }
  void validate() const;

  /// Scalar terms (theta - a_i)^2 / 2 in one dimension.
  static QuadraticInstance one_dimensional(const std::vector<double>& a);
  /// Gaussian A_i (rows_per_term x dim) and b_i.
  static QuadraticInstance random(Rng& rng, std::size_t dim, std::size_t n, std::size_t rows_per_term = 1);
};

/// Row-major dim x dim matrix.
struct DenseMatrix {
  std::size_t n = 0;
  std::vector<double> data;

  double& operator()(std::size_t r, std::size_t c) { return data[r * n + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * n + c]; }
  double trace() const;
};

double term_loss(const ParamVector& theta, const QuadraticTerm& term);
double weighted_loss(const ParamVector& theta, const DataWeights& weights, const QuadraticInstance& instance);
ParamVector weighted_gradient(const ParamVector& theta, const DataWeights& weights, const QuadraticInstance& instance);
DenseMatrix weighted_hessian(const DataWeights& weights, const QuadraticInstance& instance);

/// Exact minimizer of the loss summed over `retain` (normal equations).
/// Throws if that subproblem is rank deficient.
ParamVector exact_retrain_oracle(const QuadraticInstance& instance, const std::vector<std::size_t>& retain);

/// Minimizer of the fully weighted problem.
ParamVector full_training_minimizer(const QuadraticInstance& instance);

/// Which curvature the closed-form update inverts.
///   retain: Hessian of the loss summed over the retain set. The update is
///           then one Newton step on the retain objective, exact on
///           quadratics.
///   mean:   Hessian of the 1/N-weighted full loss.
enum class HessianSource { retain, mean };

struct InfluenceOptions {
  /// nullopt selects 1e-4 * trace(H) / dim.
  std::optional<double> damping;
  HessianSource hessian = HessianSource::retain;
  /// Bound on |grad of the 1/N-weighted full loss at theta_o|.
  double stationarity_tolerance = 1e-8;
};

double default_damping(const DenseMatrix& h);

/// theta_o + (H + damping I)^-1 grad l(theta_o, 1 - w_MU), where the gradient
/// is that of the loss summed over the forget set.
ParamVector influence_unlearn(const ParamVector& theta_o, const QuadraticInstance& instance,
                              const std::vector<std::size_t>& forget, const InfluenceOptions& options = {});

/// Complement of `forget` in [0, n), sorted.
std::vector<std::size_t> complement_indices(std::size_t n, const std::vector<std::size_t>& forget);

// ---------------------------------------------------------------------------
// Toy language model

struct LmInfluenceOptions {
  /// nullopt selects 1e-4 * trace(H) / dim on the diagonal estimate.
  std::optional<double> damping;
  HessianSource hessian = HessianSource::retain;
};

/// Closed-form update on the toy model with the diagonal Gauss-Newton
/// estimate (mean or retain-summed per-example g * g) in place of H and the
/// forget gradient sum_f grad NLL_f.
TinyLM influence_unlearn_lm(const TinyLM& model, const std::vector<Example>& forget, const std::vector<Example>& retain,
                            const LmInfluenceOptions& options = {});

// ---------------------------------------------------------------------------
// Comparison against iterative unlearning

struct ComparisonRow {
  std::string method;
  double forget_objective = 0.0;
  double retain_objective = 0.0;
  double forget_acc = 0.0;
  double retain_acc = 0.0;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;

  const ComparisonRow& row(const std::string& method) const;
  /// Header `method,forget_objective,retain_objective,forget_acc,retain_acc`.
  std::string to_csv() const;
};

/// On a quadratic instance: rows "original", "iu", "sophia", "retrain" with the
/// forget objective (summed forget loss) and retain objective (summed retain
/// loss). The sophia row takes `sophia_steps` descent steps on the retain loss from
/// theta_o; accuracy columns are NaN.
ComparisonReport influence_vs_sophia_report(const QuadraticInstance& instance, const std::vector<std::size_t>& forget,
                                          int sophia_steps = 200, double sophia_lr = 0.5);

}  // namespace unlearn
