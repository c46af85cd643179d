#pragma once

#include <optional>
#include <string>
#include <vector>

#include "unlearn/model.hpp"
#include "unlearn/numerics.hpp"

namespace unlearn {

enum class Method { ga, graddiff, po, npo };

std::string to_string(Method m);
Method parse_method(std::string_view name);

struct MethodConfig {
  Method method = Method::graddiff;
  double lambda = 1.0;
  /// Inverse temperature, NPO only.
  double beta = 1.0;

  void validate() const;
};

struct UnlearnBatch {
  std::vector<Example> forget;
  std::vector<Example> retain;
  /// Substitute responses y_f, one per forget item. PO only.
  std::optional<std::vector<TokenSequence>> forget_targets;
};

/// Scalar loss, its gradient, and the two terms it is made of.
struct LossValue {
  double value = 0.0;
  ParamVector grad;
  double forget_term = 0.0;
  double retain_term = 0.0;
};

/// -mean NLL over the forget set. Same as graddiff_loss with lambda = 0.
LossValue ga_loss(const TinyLM& model, const UnlearnBatch& batch);

/// -NLL(forget) + lambda * NLL(retain).
LossValue graddiff_loss(const TinyLM& model, const UnlearnBatch& batch, double lambda);

/// NLL(forget prompts -> forget_targets) + lambda * NLL(retain).
LossValue po_loss(const TinyLM& model, const UnlearnBatch& batch, double lambda);

/// Negative-preference loss against a frozen reference:
///   (2/beta) * mean_i log(1 + r_i^beta) + lambda * NLL(retain)
/// with log r_i = -(NLL_theta,i - NLL_ref,i), the length-normalized log
/// probability ratio. Evaluated as a softplus in log space.
LossValue npo_loss(const TinyLM& model, const ReferenceModel& ref, const UnlearnBatch& batch, double lambda,
                   double beta);

/// Dispatches on config.method. `ref` is required for NPO.
LossValue unlearning_loss(const TinyLM& model, const ReferenceModel* ref, const UnlearnBatch& batch,
                          const MethodConfig& config);

/// Default lambda per (method, second-order?) pair.
double default_lambda(Method method, bool second_order);

}  // namespace unlearn
