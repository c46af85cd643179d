#include "unlearn/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace unlearn {

namespace {

struct MeanNll {
  double value = 0.0;
  ParamVector grad;
};

// Mean NLL over examples and its gradient, reduced in example order.
MeanNll mean_nll(const TinyLM& model, const std::vector<Example>& examples) {
  MeanNll out{0.0, ParamVector(model.params.dim())};
  const double coeff = 1.0 / static_cast<double>(examples.size());
  for (const Example& ex : examples) out.value += accumulate_nll_gradient(model, ex.prompt, ex.response, coeff, out.grad);
  out.value /= static_cast<double>(examples.size());
  return out;
}

// Adds lambda * grad NLL(retain) to the forget-term gradient held in `out`.
void add_retain_term(const TinyLM& model, const UnlearnBatch& batch, double lambda, LossValue& out) {
  if (lambda == 0.0) {
    out.value = out.forget_term;
    return;
  }
  if (batch.retain.empty()) throw std::invalid_argument("retain set must be non-empty when lambda > 0");
  const MeanNll retain = mean_nll(model, batch.retain);
  out.retain_term = retain.value;
  out.value = out.forget_term + lambda * retain.value;
  axpy(lambda, retain.grad, out.grad);
}

void require_forget(const UnlearnBatch& batch) {
  if (batch.forget.empty()) throw std::invalid_argument("forget set must be non-empty");
}

void require_lambda(double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be nonnegative");
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::ga: return "ga";
    case Method::graddiff: return "graddiff";
    case Method::po: return "po";
    case Method::npo: return "npo";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  if (name == "ga") return Method::ga;
  if (name == "graddiff") return Method::graddiff;
  if (name == "po") return Method::po;
  if (name == "npo") return Method::npo;
  throw std::invalid_argument("unknown method: " + std::string(name));
}

void MethodConfig::validate() const {
  require_lambda(lambda);
  if (method == Method::npo && !(beta > 0.0)) throw std::invalid_argument("NPO beta must be positive");
}

LossValue ga_loss(const TinyLM& model, const UnlearnBatch& batch) { return graddiff_loss(model, batch, 0.0); }

LossValue graddiff_loss(const TinyLM& model, const UnlearnBatch& batch, double lambda) {
  require_forget(batch);
  require_lambda(lambda);
  const MeanNll forget = mean_nll(model, batch.forget);
  LossValue out{0.0, scale(forget.grad, -1.0), -forget.value, 0.0};
  add_retain_term(model, batch, lambda, out);
  return out;
}

LossValue po_loss(const TinyLM& model, const UnlearnBatch& batch, double lambda) {
  require_forget(batch);
  require_lambda(lambda);
  if (!batch.forget_targets) throw std::invalid_argument("PO requires forget_targets");
  const auto& targets = *batch.forget_targets;
  if (targets.size() != batch.forget.size()) throw std::invalid_argument("PO requires one target per forget example");
  LossValue out{0.0, ParamVector(model.params.dim()), 0.0, 0.0};
  const double coeff = 1.0 / static_cast<double>(batch.forget.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.forget.size(); ++i) {
    sum += accumulate_nll_gradient(model, batch.forget[i].prompt, targets[i], coeff, out.grad);
  }
  out.forget_term = sum / static_cast<double>(batch.forget.size());
  add_retain_term(model, batch, lambda, out);
  return out;
}

LossValue npo_loss(const TinyLM& model, const ReferenceModel& ref, const UnlearnBatch& batch, double lambda,
                   double beta) {
  require_forget(batch);
  require_lambda(lambda);
  if (!(beta > 0.0)) throw std::invalid_argument("NPO beta must be positive");
  if (ref.model().config != model.config) throw std::invalid_argument("reference model architecture differs");
  LossValue out{0.0, ParamVector(model.params.dim()), 0.0, 0.0};
  const auto n = static_cast<double>(batch.forget.size());
  double sum = 0.0;
  for (const Example& ex : batch.forget) {
    const double nll = sequence_nll(model, ex.prompt, ex.response);
    const double nll_ref = sequence_nll(ref.model(), ex.prompt, ex.response);
    const double log_ratio = nll_ref - nll;
    sum += (2.0 / beta) * softplus(beta * log_ratio);
    // d/dtheta (2/beta) softplus(beta * log_ratio) = -2 sigmoid(beta * log_ratio) * dNLL/dtheta
    const double coeff = -2.0 * sigmoid(beta * log_ratio) / n;
    accumulate_nll_gradient(model, ex.prompt, ex.response, coeff, out.grad);
  }
  out.forget_term = sum / n;
  add_retain_term(model, batch, lambda, out);
  return out;
}

LossValue unlearning_loss(const TinyLM& model, const ReferenceModel* ref, const UnlearnBatch& batch,
                          const MethodConfig& config) {
  config.validate();
  switch (config.method) {
    case Method::ga: return ga_loss(model, batch);
    case Method::graddiff: return graddiff_loss(model, batch, config.lambda);
    case Method::po: return po_loss(model, batch, config.lambda);
    case Method::npo:
      if (ref == nullptr) throw std::invalid_argument("NPO requires a reference model");
      return npo_loss(model, *ref, batch, config.lambda, config.beta);
  }
  throw std::logic_error("unreachable");
}

double default_lambda(Method method, bool second_order) {
  switch (method) {
    case Method::ga: return 0.0;
    case Method::graddiff: return second_order ? 2.0 : 0.3;
    case Method::po: return second_order ? 5.0 : 1.0;
    case Method::npo: return second_order ? 1.0 : 5.0;
  }
  return 0.0;
}

}  // namespace unlearn
