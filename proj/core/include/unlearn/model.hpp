#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "unlearn/numerics.hpp"
#include "unlearn/text.hpp"

namespace unlearn {

enum class Arch { linear, mlp };

/// Architecture of a TinyLM.
///
/// `mlp`: the last `context_window` tokens are embedded, concatenated
/// (right-aligned, empty slots are zero vectors), then passed through
/// `depth - 1` affine+tanh layers of width `hidden_dim` and a final affine
/// layer onto the vocabulary.
///
/// `linear`: a bigram logit table, logits = T[last token]. The empty prefix
/// produces zero logits. Intended for hand-checkable tests.
struct ModelConfig {
  Arch arch = Arch::mlp;
  int vocab_size = 64;
  int context_window = 32;
  int embed_dim = 8;
  int hidden_dim = 32;
  int depth = 2;

  void validate() const;
  std::size_t param_count() const;
  TokenId end_token() const noexcept { return vocab_size - 1; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string to_string(Arch arch);
Arch parse_arch(std::string_view name);

struct TinyLM {
  ModelConfig config;
  ParamVector params;

  static TinyLM zeros(const ModelConfig& config);
  /// Weights and embeddings uniform(-0.1, 0.1) from the "init" stream; biases zero.
  static TinyLM initialize(const ModelConfig& config, Seed seed);

  /// Throws if params.dim() disagrees with the architecture.
  void validate() const;
};

/// Frozen snapshot of a model, taken when unlearning starts.
class ReferenceModel {
 public:
  explicit ReferenceModel(TinyLM model) : model_(std::move(model)) {}
  const TinyLM& model() const noexcept { return model_; }

 private:
  TinyLM model_;
};

/// One (prompt, response) pair; the response is what the loss scores.
struct Example {
  TokenSequence prompt;
  TokenSequence response;
  friend bool operator==(const Example&, const Example&) = default;
};

/// Row-major [rows x cols] matrix of logits.
struct LogitMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

/// Row r scores the token following context[0..r]. Throws std::length_error
/// if the context is longer than the window.
LogitMatrix forward_logits(const TinyLM& model, const TokenSequence& context);

/// Logits for the token that follows `prefix` (which may be empty).
std::vector<double> next_token_logits(const TinyLM& model, const TokenSequence& prefix);

/// log p(y_t | x, y_<t) for each response position.
std::vector<double> per_token_logprobs(const TinyLM& model, const TokenSequence& x, const TokenSequence& y);

/// Mean per-token negative log-likelihood of y given x.
double sequence_nll(const TinyLM& model, const TokenSequence& x, const TokenSequence& y);

/// Adds coeff * d/dtheta sequence_nll(x, y) into `grad` and returns the NLL.
double accumulate_nll_gradient(const TinyLM& model, const TokenSequence& x, const TokenSequence& y, double coeff,
                               ParamVector& grad);

/// Gradient of the batch-mean sequence_nll. Examples are reduced in order.
ParamVector grad_sequence_nll(const TinyLM& model, std::span<const Example> batch);

/// Mean sequence_nll over a batch.
double batch_nll(const TinyLM& model, std::span<const Example> batch);

/// Appends argmax tokens (ties to the lowest id) until `max_new` tokens, the
/// end token, or the context window is full. The end token is not appended.
TokenSequence greedy_decode(const TinyLM& model, const TokenSequence& prompt, int max_new);

/// Checkpoint: "ULKCKPT1" magic, u32 format version, u32 arch, u32 vocab,
/// u32 context, u32 embed, u32 hidden, u32 depth, u64 count, count float64.
/// All integers and floats little-endian.
std::string encode_checkpoint(const TinyLM& model);
TinyLM decode_checkpoint(std::string_view bytes);
void save_checkpoint(const TinyLM& model, const std::filesystem::path& path);
TinyLM load_checkpoint(const std::filesystem::path& path);

}  // namespace unlearn
