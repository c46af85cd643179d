#include "unlearn/influence.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "unlearn/eval.hpp"
#include "unlearn/optim.hpp"

namespace unlearn {

namespace {

Eigen::MatrixXd to_eigen(const DenseMatrix& m) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(m.n), static_cast<Eigen::Index>(m.n));
  for (std::size_t r = 0; r < m.n; ++r) {
    for (std::size_t c = 0; c < m.n; ++c) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m(r, c);
  }
  return out;
}

Eigen::VectorXd to_eigen(const ParamVector& v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.dim()));
  for (std::size_t i = 0; i < v.dim(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

ParamVector from_eigen(const Eigen::VectorXd& v) {
  ParamVector out(static_cast<std::size_t>(v.size()));
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] = v(static_cast<Eigen::Index>(i));
  return out;
}

// Solves m x = rhs for symmetric m, throwing when m is singular or not
// positive definite.
Eigen::VectorXd spd_solve(const Eigen::MatrixXd& m, const Eigen::VectorXd& rhs, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success) throw std::runtime_error(std::string(what) + ": eigendecomposition failed");
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 1e-12 * std::max(hi, 1.0))) {
    std::ostringstream msg;
    msg << what << ": matrix is singular or indefinite (smallest eigenvalue " << lo << ", largest " << hi << ")";
    throw std::domain_error(msg.str());
  }
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  return llt.solve(rhs);
}

void check_indices(std::size_t n, const std::vector<std::size_t>& idx, const char* what) {
  std::set<std::size_t> seen;
  for (std::size_t i : idx) {
    if (i >= n) throw std::out_of_range(std::string(what) + ": index " + std::to_string(i) + " out of range");
    if (!seen.insert(i).second) throw std::invalid_argument(std::string(what) + ": duplicate index " + std::to_string(i));
  }
}

DataWeights indicator(std::size_t n, const std::vector<std::size_t>& idx) {
  DataWeights w{std::vector<double>(n, 0.0)};
  for (std::size_t i : idx) w.w[i] = 1.0;
  return w;
}

double sum_loss(const ParamVector& theta, const QuadraticInstance& inst, const std::vector<std::size_t>& idx) {
  return weighted_loss(theta, indicator(inst.size(), idx), inst);
}

}  // namespace

DataWeights DataWeights::ones(std::size_t n) { return DataWeights{std::vector<double>(n, 1.0)}; }

DataWeights DataWeights::retain_indicator(std::size_t n, const std::vector<std::size_t>& forget) {
  check_indices(n, forget, "retain_indicator");
  DataWeights w = ones(n);
  for (std::size_t i : forget) w.w[i] = 0.0;
  return w;
}

DataWeights DataWeights::complement() const {
  DataWeights out{w};
  for (double& x : out.w) x = 1.0 - x;
  return out;
}

void DataWeights::validate() const {
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!(w[i] >= 0.0 && w[i] <= 1.0)) throw std::invalid_argument("data weight " + std::to_string(i) + " outside [0, 1]");
  }
}

void QuadraticInstance::validate() const {
  if (dim == 0) throw std::invalid_argument("quadratic instance: zero dimension");
  for (const auto& t : terms) {
    if (t.a.size() != t.rows * dim || t.b.size() != t.rows) throw std::invalid_argument("quadratic instance: term shape mismatch");
  }
}

QuadraticInstance QuadraticInstance::one_dimensional(const std::vector<double>& a) {
  QuadraticInstance inst;
  inst.dim = 1;
  for (double v : a) inst.terms.push_back(QuadraticTerm{1, {1.0}, {v}});
  return inst;
}

QuadraticInstance QuadraticInstance::random(Rng& rng, std::size_t dim, std::size_t n, std::size_t rows_per_term) {
  QuadraticInstance inst;
  inst.dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    QuadraticTerm t;
    t.rows = rows_per_term;
    for (std::size_t k = 0; k < rows_per_term * dim; ++k) t.a.push_back(rng.normal());
    for (std::size_t k = 0; k < rows_per_term; ++k) t.b.push_back(rng.normal());
    inst.terms.push_back(std::move(t));
  }
  return inst;
}

double DenseMatrix::trace() const {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (*this)(i, i);
  return s;
}

double term_loss(const ParamVector& theta, const QuadraticTerm& term) {
  const std::size_t d = theta.dim();
  double s = 0.0;
  for (std::size_t r = 0; r < term.rows; ++r) {
    double res = -term.b[r];
    for (std::size_t c = 0; c < d; ++c) res += term.a[r * d + c] * theta[c];
    s += res * res;
  }
  return 0.5 * s;
}

double weighted_loss(const ParamVector& theta, const DataWeights& weights, const QuadraticInstance& instance) {
  if (weights.w.size() != instance.size()) throw std::invalid_argument("weighted_loss: weight length mismatch");
  if (theta.dim() != instance.dim) throw std::invalid_argument("weighted_loss: parameter dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < instance.size(); ++i) {
    if (weights.w[i] != 0.0) s += weights.w[i] * term_loss(theta, instance.terms[i]);
  }
  return s;
}

ParamVector weighted_gradient(const ParamVector& theta, const DataWeights& weights, const QuadraticInstance& instance) {
  if (weights.w.size() != instance.size()) throw std::invalid_argument("weighted_gradient: weight length mismatch");
  if (theta.dim() != instance.dim) throw std::invalid_argument("weighted_gradient: parameter dimension mismatch");
  const std::size_t d = instance.dim;
  ParamVector g(d);
  for (std::size_t i = 0; i < instance.size(); ++i) {
    const double wi = weights.w[i];
    if (wi == 0.0) continue;
    const auto& t = instance.terms[i];
    for (std::size_t r = 0; r < t.rows; ++r) {
      double res = -t.b[r];
      for (std::size_t c = 0; c < d; ++c) res += t.a[r * d + c] * theta[c];
      for (std::size_t c = 0; c < d; ++c) g[c] += wi * res * t.a[r * d + c];
    }
  }
  return g;
}

DenseMatrix weighted_hessian(const DataWeights& weights, const QuadraticInstance& instance) {
  if (weights.w.size() != instance.size()) throw std::invalid_argument("weighted_hessian: weight length mismatch");
  const std::size_t d = instance.dim;
  DenseMatrix h{d, std::vector<double>(d * d, 0.0)};
  for (std::size_t i = 0; i < instance.size(); ++i) {
    const double wi = weights.w[i];
    if (wi == 0.0) continue;
    const auto& t = instance.terms[i];
    for (std::size_t r = 0; r < t.rows; ++r) {
      for (std::size_t p = 0; p < d; ++p) {
        for (std::size_t q = 0; q < d; ++q) h(p, q) += wi * t.a[r * d + p] * t.a[r * d + q];
      }
    }
  }
  return h;
}

ParamVector exact_retrain_oracle(const QuadraticInstance& instance, const std::vector<std::size_t>& retain) {
  instance.validate();
  check_indices(instance.size(), retain, "exact_retrain_oracle");
  const DataWeights w = indicator(instance.size(), retain);
  const DenseMatrix h = weighted_hessian(w, instance);
  // Normal equations: (sum A^T A) theta = sum A^T b = -grad at 0.
  const ParamVector rhs = scale(weighted_gradient(ParamVector(instance.dim), w, instance), -1.0);
  const Eigen::MatrixXd m = to_eigen(h);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  lu.setThreshold(1e-12);
  if (lu.rank() < static_cast<Eigen::Index>(instance.dim)) {
    throw std::domain_error("exact_retrain_oracle: retain problem is rank deficient (rank " + std::to_string(lu.rank()) +
                            " < " + std::to_string(instance.dim) + ")");
  }
  return from_eigen(spd_solve(m, to_eigen(rhs), "exact_retrain_oracle"));
}

ParamVector full_training_minimizer(const QuadraticInstance& instance) {
  return exact_retrain_oracle(instance, complement_indices(instance.size(), {}));
}

std::vector<std::size_t> complement_indices(std::size_t n, const std::vector<std::size_t>& forget) {
  check_indices(n, forget, "complement_indices");
  std::vector<bool> drop(n, false);
  for (std::size_t i : forget) drop[i] = true;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!drop[i]) out.push_back(i);
  }
  return out;
}

double default_damping(const DenseMatrix& h) { return h.n == 0 ? 0.0 : 1e-4 * h.trace() / static_cast<double>(h.n); }

ParamVector influence_unlearn(const ParamVector& theta_o, const QuadraticInstance& instance,
                              const std::vector<std::size_t>& forget, const InfluenceOptions& options) {
  instance.validate();
  if (instance.size() == 0) throw std::invalid_argument("influence_unlearn: empty instance");
  if (theta_o.dim() != instance.dim) throw std::invalid_argument("influence_unlearn: parameter dimension mismatch");
  check_indices(instance.size(), forget, "influence_unlearn");
  if (options.damping && !(*options.damping >= 0.0)) throw std::invalid_argument("influence_unlearn: damping must be >= 0");
  if (forget.empty()) return theta_o;

  const auto n = static_cast<double>(instance.size());
  DataWeights mean_w = DataWeights::ones(instance.size());
  for (double& x : mean_w.w) x /= n;
  const double stationarity = norm2(weighted_gradient(theta_o, mean_w, instance));
  if (!(stationarity < options.stationarity_tolerance)) {
    std::ostringstream msg;
    msg << "influence_unlearn: theta_o is not a minimizer of the full problem (gradient norm " << stationarity << ")";
    throw std::invalid_argument(msg.str());
  }

  const DataWeights w_mu = DataWeights::retain_indicator(instance.size(), forget);
  const DenseMatrix h = options.hessian == HessianSource::retain ? weighted_hessian(w_mu, instance)
                                                                 : weighted_hessian(mean_w, instance);
  const double damping = options.damping ? *options.damping : default_damping(h);
  Eigen::MatrixXd m = to_eigen(h);
  m.diagonal().array() += damping;
  const ParamVector g = weighted_gradient(theta_o, w_mu.complement(), instance);
  Eigen::VectorXd delta;
  try {
    delta = spd_solve(m, to_eigen(g), "influence_unlearn");
  } catch (const std::domain_error& e) {
    throw std::domain_error(std::string(e.what()) + "; use a positive damping");
  }
  return add(theta_o, from_eigen(delta));
}

TinyLM influence_unlearn_lm(const TinyLM& model, const std::vector<Example>& forget, const std::vector<Example>& retain,
                            const LmInfluenceOptions& options) {
  if (options.damping && !(*options.damping >= 0.0)) throw std::invalid_argument("influence_unlearn_lm: damping must be >= 0");
  if (forget.empty()) return model;
  const std::size_t dim = model.params.dim();
  ParamVector h(dim), g(dim), gi(dim);
  auto add_square = [&](const Example& ex, double weight) {
    std::fill(gi.begin(), gi.end(), 0.0);
    accumulate_nll_gradient(model, ex.prompt, ex.response, 1.0, gi);
    for (std::size_t k = 0; k < dim; ++k) h[k] += weight * gi[k] * gi[k];
  };
  const auto n = static_cast<double>(forget.size() + retain.size());
  const bool mean = options.hessian == HessianSource::mean;
  for (const auto& ex : retain) add_square(ex, mean ? 1.0 / n : 1.0);
  for (const auto& ex : forget) {
    if (mean) add_square(ex, 1.0 / n);
    accumulate_nll_gradient(model, ex.prompt, ex.response, 1.0, g);
  }
  double trace = 0.0;
  for (double x : h) trace += x;
  const double damping = options.damping ? *options.damping : 1e-4 * trace / static_cast<double>(dim);
  TinyLM out = model;
  for (std::size_t k = 0; k < dim; ++k) {
    const double denom = h[k] + damping;
    if (g[k] == 0.0) continue;
    if (!(denom > 0.0)) throw std::domain_error("influence_unlearn_lm: zero curvature on coordinate " + std::to_string(k) + "; use a positive damping");
    out.params[k] += g[k] / denom;
  }
  require_finite(out.params, "influence_unlearn_lm");
  return out;
}

const ComparisonRow& ComparisonReport::row(const std::string& method) const {
  for (const auto& r : rows) {
    if (r.method == method) return r;
  }
  throw std::out_of_range("comparison report has no row " + method);
}

std::string ComparisonReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "method,forget_objective,retain_objective,forget_acc,retain_acc\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.forget_objective << ',' << r.retain_objective << ',' << r.forget_acc << ',' << r.retain_acc << '\n';
  }
  return out.str();
}

ComparisonReport influence_vs_sophia_report(const QuadraticInstance& instance, const std::vector<std::size_t>& forget,
                                          int sophia_steps, double sophia_lr) {
  const auto retain = complement_indices(instance.size(), forget);
  const ParamVector theta_o = full_training_minimizer(instance);
  const ParamVector iu = influence_unlearn(theta_o, instance, forget, InfluenceOptions{0.0});
  const ParamVector retrained = exact_retrain_oracle(instance, retain);

  // Sophia descent on the retain objective with the exact Hessian diagonal as
  // its curvature sample.
  const DataWeights w_r = indicator(instance.size(), retain);
  const DenseMatrix h = weighted_hessian(w_r, instance);
  ParamVector h_diag(instance.dim);
  for (std::size_t i = 0; i < instance.dim; ++i) h_diag[i] = h(i, i);
  SophiaHyper hyper;
  hyper.gamma = 1.0;
  OptimizerState state = OptimizerState::zeros(instance.dim, LearningRateSchedule::constant(sophia_lr), hyper);
  ParamVector theta = theta_o;
  for (int s = 0; s < sophia_steps; ++s) {
    const ParamVector g = weighted_gradient(theta, w_r, instance);
    if (norm2(g) < 1e-13) break;
    auto step = sophia_step(state, g, theta, StepMode::descent, &h_diag);
    theta = std::move(step.theta);
    state = std::move(step.state);
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  ComparisonReport report;
  auto push = [&](const char* name, const ParamVector& t) {
    report.rows.push_back(ComparisonRow{name, sum_loss(t, instance, forget), sum_loss(t, instance, retain), nan, nan});
  };
  push("original", theta_o);
  push("iu", iu);
  push("sophia", theta);
  push("retrain", retrained);
  return report;
}

}  // namespace unlearn
