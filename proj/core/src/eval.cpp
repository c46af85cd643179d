#include "unlearn/eval.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

namespace unlearn {

namespace {

std::vector<std::string> answer_words(const TokenSequence& tokens) { return text::split_words(text::decode(tokens)); }

std::vector<std::string> generated_words(const TinyLM& model, const EvalExample& ex, int max_new) {
  const TokenSequence out = greedy_decode(model, ex.prompt, max_new);
  const TokenSequence generated(out.begin() + static_cast<std::ptrdiff_t>(ex.prompt.size()), out.end());
  return text::split_words(text::decode(generated));
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

EvalExample to_eval_example(const CorpusExample& ex, std::string_view prefix) {
  EvalExample out;
  out.prompt = text::encode(std::string(prefix) + ex.prompt);
  out.answer = encode_response(ex.answer);
  for (const auto& p : ex.perturbed) out.perturbed.push_back(encode_response(p));
  out.split = ex.split;
  return out;
}

std::vector<EvalExample> eval_examples(const Corpus& corpus, Split s, std::string_view prefix) {
  std::vector<EvalExample> out;
  for (const auto* ex : corpus.split(s)) out.push_back(to_eval_example(*ex, prefix));
  return out;
}

double kolmogorov_survival(double z) {
  if (!(z > 0.0)) return 1.0;
  if (z < 1.18) {
    // P(K <= z) = sqrt(2 pi) / z * sum_k exp(-(2k-1)^2 pi^2 / (8 z^2))
    const double w = -std::numbers::pi * std::numbers::pi / (8.0 * z * z);
    double s = 0.0;
    for (int k = 1; k <= 50; ++k) {
      const double term = std::exp(static_cast<double>((2 * k - 1) * (2 * k - 1)) * w);
      s += term;
      if (term < 1e-300) break;
    }
    return 1.0 - std::sqrt(2.0 * std::numbers::pi) / z * s;
  }
  // Q(z) = 2 sum_k (-1)^(k-1) exp(-2 k^2 z^2)
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * z * z);
    s += (k % 2 == 1 ? term : -term);
    if (term < 1e-300) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

KsResult ks_test(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_test: empty sample");
  for (double v : a) {
    if (std::isnan(v)) throw std::domain_error("ks_test: NaN in first sample");
  }
  for (double v : b) {
    if (std::isnan(v)) throw std::domain_error("ks_test: NaN in second sample");
  }
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const auto n = static_cast<double>(x.size());
  const auto m = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  const double en = std::sqrt(n * m / (n + m));
  return KsResult{d, kolmogorov_survival(en * d)};
}

double truth_ratio(const TinyLM& model, const EvalExample& example) {
  if (example.perturbed.empty()) throw std::invalid_argument("truth_ratio: no perturbed answers");
  // Log space: both probabilities can underflow after aggressive unlearning.
  const double log_correct = -sequence_nll(model, example.prompt, example.answer);
  std::vector<double> log_perturbed;
  for (const auto& p : example.perturbed) log_perturbed.push_back(-sequence_nll(model, example.prompt, p));
  const double top = *std::max_element(log_perturbed.begin(), log_perturbed.end());
  double s = 0.0;
  for (double lp : log_perturbed) s += std::exp(lp - top);
  const double log_mean = top + std::log(s / static_cast<double>(log_perturbed.size()));
  return std::exp(log_correct - log_mean);
}

std::vector<double> truth_ratios(const TinyLM& model, std::span<const EvalExample> examples) {
  std::vector<double> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(truth_ratio(model, ex));
  return out;
}

double forget_quality_from_ratios(std::span<const double> forget_ratios, std::span<const double> retain_ratios) {
  return 1.0 - ks_test(forget_ratios, retain_ratios).p_value;
}

double forget_quality(const TinyLM& model, std::span<const EvalExample> forget, std::span<const EvalExample> retain) {
  if (forget.empty() || retain.empty()) throw std::invalid_argument("forget_quality: empty split");
  const auto f = truth_ratios(model, forget);
  const auto r = truth_ratios(model, retain);
  return forget_quality_from_ratios(f, r);
}

double mc_accuracy(const TinyLM& model, std::span<const EvalExample> examples) {
  if (examples.empty()) throw std::invalid_argument("mc_accuracy: no examples");
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    const double score = -sequence_nll(model, ex.prompt, ex.answer);
    bool best = true;
    for (const auto& p : ex.perturbed) {
      if (-sequence_nll(model, ex.prompt, p) >= score) {
        best = false;
        break;
      }
    }
    if (best) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

double min_k_from_logprobs(std::vector<double> logprobs, double k_percent) {
  if (logprobs.empty()) throw std::invalid_argument("empty response");
  if (!(k_percent > 0.0 && k_percent <= 100.0)) throw std::invalid_argument("k_percent must lie in (0, 100]");
  const auto n = logprobs.size();
  auto count = static_cast<std::size_t>(std::floor(k_percent * static_cast<double>(n) / 100.0 + 1e-9));
  count = std::clamp<std::size_t>(count, 1, n);
  std::sort(logprobs.begin(), logprobs.end());
  double s = 0.0;
  for (std::size_t i = 0; i < count; ++i) s += logprobs[i];
  return s / static_cast<double>(count);
}

double min_k_score(const TinyLM& model, const TokenSequence& x, const TokenSequence& y, double k_percent) {
  return min_k_from_logprobs(per_token_logprobs(model, x, y), k_percent);
}

std::vector<double> min_k_scores(const TinyLM& model, std::span<const EvalExample> examples, double k_percent) {
  std::vector<double> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(min_k_score(model, ex.prompt, ex.answer, k_percent));
  return out;
}

double mia_auc(std::span<const double> member_scores, std::span<const double> nonmember_scores) {
  if (member_scores.empty() || nonmember_scores.empty()) throw std::invalid_argument("mia_auc: empty score set");
  double wins = 0.0;
  for (double a : member_scores) {
    for (double b : nonmember_scores) {
      if (a > b) wins += 1.0;
      else if (a == b) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(member_scores.size()) * static_cast<double>(nonmember_scores.size()));
}

double rouge_l_recall(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference) {
  if (reference.empty()) throw std::invalid_argument("rouge_l_recall: empty reference");
  return static_cast<double>(lcs_length(hypothesis, reference)) / static_cast<double>(reference.size());
}

double bleu(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference, int max_n) {
  if (max_n < 1) throw std::invalid_argument("bleu: max_n must be positive");
  if (hypothesis.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    std::map<std::vector<std::string>, std::size_t> ref_counts, hyp_counts;
    const auto un = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + un <= reference.size(); ++i) {
      ++ref_counts[std::vector<std::string>(reference.begin() + static_cast<std::ptrdiff_t>(i),
                                            reference.begin() + static_cast<std::ptrdiff_t>(i + un))];
    }
    std::size_t total = 0;
    for (std::size_t i = 0; i + un <= hypothesis.size(); ++i) {
      ++hyp_counts[std::vector<std::string>(hypothesis.begin() + static_cast<std::ptrdiff_t>(i),
                                            hypothesis.begin() + static_cast<std::ptrdiff_t>(i + un))];
      ++total;
    }
    std::size_t clipped = 0;
    for (const auto& [gram, c] : hyp_counts) {
      const auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) clipped += std::min(c, it->second);
    }
    double numerator = static_cast<double>(clipped);
    double denominator = static_cast<double>(std::max<std::size_t>(total, 1));
    if (n == 1) {
      if (clipped == 0) return 0.0;
    } else {
      numerator += 1.0;
      denominator += 1.0;
    }
    log_sum += std::log(numerator / denominator) / static_cast<double>(max_n);
  }
  const auto c = static_cast<double>(hypothesis.size());
  const auto r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum);
}

double perplexity(const TinyLM& model, std::span<const TokenSequence> corpus) {
  if (corpus.empty()) throw std::invalid_argument("perplexity: empty corpus");
  double total_nll = 0.0;
  std::size_t total_tokens = 0;
  const TokenSequence empty;
  for (const auto& seq : corpus) {
    for (double lp : per_token_logprobs(model, empty, seq)) total_nll -= lp;
    total_tokens += seq.size();
  }
  return std::exp(total_nll / static_cast<double>(total_tokens));
}

void MetricsReport::validate() const {
  const double unit[] = {forget_quality, forget_acc, rouge_forget, mia_auc, bleu, retain_acc, rouge_retain, holdout_acc};
  for (double v : unit) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::logic_error("metrics report: value outside [0, 1]");
  }
  if (!(perplexity > 0.0)) throw std::logic_error("metrics report: invalid perplexity");
}

MetricsReport evaluate(const TinyLM& model, const Corpus& corpus, const EvalOptions& options) {
  const auto forget = eval_examples(corpus, Split::forget, options.prompt_prefix);
  const auto retain = eval_examples(corpus, Split::retain, options.prompt_prefix);
  const auto holdout = eval_examples(corpus, Split::holdout, options.prompt_prefix);
  if (forget.empty() || retain.empty() || holdout.empty()) {
    throw std::invalid_argument("evaluate: corpus needs forget, retain and holdout examples");
  }

  MetricsReport r;
  r.forget_quality = forget_quality(model, forget, retain);
  r.forget_acc = mc_accuracy(model, forget);
  r.retain_acc = mc_accuracy(model, retain);
  r.holdout_acc = mc_accuracy(model, holdout);

  std::vector<double> rouge_f, rouge_r, bleu_f;
  for (const auto& ex : forget) {
    const auto hyp = generated_words(model, ex, options.max_new_tokens);
    const auto ref = answer_words(ex.answer);
    rouge_f.push_back(rouge_l_recall(hyp, ref));
    bleu_f.push_back(bleu(hyp, ref));
  }
  for (const auto& ex : retain) rouge_r.push_back(rouge_l_recall(generated_words(model, ex, options.max_new_tokens), answer_words(ex.answer)));
  r.rouge_forget = mean(rouge_f);
  r.rouge_retain = mean(rouge_r);
  r.bleu = mean(bleu_f);

  // Membership scores ignore any prompt prefix: they probe the parameters.
  const auto forget_raw = eval_examples(corpus, Split::forget);
  const auto holdout_raw = eval_examples(corpus, Split::holdout);
  r.mia_auc = mia_auc(min_k_scores(model, forget_raw, options.min_k_percent),
                      min_k_scores(model, holdout_raw, options.min_k_percent));

  std::vector<TokenSequence> texts;
  for (const auto* ex : corpus.split(Split::retain)) {
    TokenSequence seq = text::encode(ex->prompt);
    const TokenSequence ans = encode_response(ex->answer);
    seq.insert(seq.end(), ans.begin(), ans.end());
    texts.push_back(std::move(seq));
  }
  r.perplexity = perplexity(model, texts);
  r.validate();
  return r;
}

}  // namespace unlearn
