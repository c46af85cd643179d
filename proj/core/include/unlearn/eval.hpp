#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "unlearn/data.hpp"
#include "unlearn/model.hpp"

namespace unlearn {

/// A scored question: the correct answer plus distractors, tokenized with a
/// trailing end token.
struct EvalExample {
  TokenSequence prompt;
  TokenSequence answer;
  std::vector<TokenSequence> perturbed;
  Split split = Split::retain;
};

EvalExample to_eval_example(const CorpusExample& ex, std::string_view prefix = {});
std::vector<EvalExample> eval_examples(const Corpus& corpus, Split s, std::string_view prefix = {});

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test with the asymptotic two-sided p-value
/// Q_KS(sqrt(n m / (n + m)) * D).
KsResult ks_test(std::span<const double> a, std::span<const double> b);

/// Survival function of the limiting Kolmogorov distribution, P(K > z).
double kolmogorov_survival(double z);

/// P(correct) / mean_j P(perturbed_j) with P the geometric-mean per-token
/// probability exp(-sequence_nll).
double truth_ratio(const TinyLM& model, const EvalExample& example);

/// 1 - p of the KS test between forget-set and retain-set truth ratios.
double forget_quality(const TinyLM& model, std::span<const EvalExample> forget, std::span<const EvalExample> retain);
double forget_quality_from_ratios(std::span<const double> forget_ratios, std::span<const double> retain_ratios);

/// Fraction of examples whose correct answer has strictly the highest
/// geometric-mean probability among {correct} and the perturbed answers.
double mc_accuracy(const TinyLM& model, std::span<const EvalExample> examples);

/// Mean of the lowest max(1, floor(k% * |y|)) per-token log-probabilities.
double min_k_score(const TinyLM& model, const TokenSequence& x, const TokenSequence& y, double k_percent);
double min_k_from_logprobs(std::vector<double> logprobs, double k_percent);

/// P(member score > nonmember score), ties counted as one half. Exact
/// pairwise count.
double mia_auc(std::span<const double> member_scores, std::span<const double> nonmember_scores);

/// Longest common subsequence length.
template <typename T>
std::size_t lcs_length(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_recall(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference);

/// Sentence BLEU against one reference: geometric mean of clipped n-gram
/// precisions for n = 1..max_n, orders n >= 2 smoothed as (c + 1) / (t + 1),
/// times the brevity penalty. An empty hypothesis scores 0.
double bleu(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference, int max_n = 4);

/// exp of the token-weighted mean NLL of each sequence scored from an empty prefix.
double perplexity(const TinyLM& model, std::span<const TokenSequence> corpus);

struct EvalOptions {
  double min_k_percent = 20.0;
  int max_new_tokens = 24;
  /// Text prepended to every prompt (input-based unlearning baseline).
  std::string prompt_prefix;
};

struct MetricsReport {
  double forget_quality = 0.0;
  double forget_acc = 0.0;
  double rouge_forget = 0.0;
  double mia_auc = 0.0;
  double bleu = 0.0;
  double retain_acc = 0.0;
  double rouge_retain = 0.0;
  double holdout_acc = 0.0;
  double perplexity = 0.0;

  /// Throws std::logic_error if a field is out of its valid range.
  void validate() const;
};

/// Full metric suite for a model on a corpus.
MetricsReport evaluate(const TinyLM& model, const Corpus& corpus, const EvalOptions& options = {});

/// Min-k% scores of each example's (prompt, answer).
std::vector<double> min_k_scores(const TinyLM& model, std::span<const EvalExample> examples, double k_percent);

std::vector<double> truth_ratios(const TinyLM& model, std::span<const EvalExample> examples);

}  // namespace unlearn
