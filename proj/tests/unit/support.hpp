#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "unlearn/model.hpp"
#include "unlearn/numerics.hpp"

namespace unlearn::testing {

inline ModelConfig small_mlp(int vocab = 6, int context = 8) {
  ModelConfig c;
  c.arch = Arch::mlp;
  c.vocab_size = vocab;
  c.context_window = context;
  c.embed_dim = 3;
  c.hidden_dim = 5;
  c.depth = 2;
  return c;
}

inline ModelConfig small_linear(int vocab = 4, int context = 8) {
  ModelConfig c;
  c.arch = Arch::linear;
  c.vocab_size = vocab;
  c.context_window = context;
  return c;
}

/// Parameters uniform in [-scale, scale]; larger than the default init so
/// gradients are not dominated by near-zero terms.
inline TinyLM random_model(Rng& rng, const ModelConfig& config, double scale = 0.5) {
  TinyLM m = TinyLM::zeros(config);
  for (double& p : m.params) p = rng.uniform(-scale, scale);
  return m;
}

inline TokenSequence random_tokens(Rng& rng, std::size_t len, int vocab) {
  TokenSequence s(len);
  for (auto& t : s) t = static_cast<TokenId>(rng.index(static_cast<std::size_t>(vocab)));
  return s;
}

inline Example random_example(Rng& rng, int vocab, std::size_t max_prompt, std::size_t max_response) {
  return Example{random_tokens(rng, rng.index(max_prompt + 1), vocab), random_tokens(rng, 1 + rng.index(max_response), vocab)};
}

inline std::vector<Example> random_batch(Rng& rng, int vocab, std::size_t n, std::size_t max_prompt = 3,
                                         std::size_t max_response = 3) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_example(rng, vocab, max_prompt, max_response));
  return out;
}

/// max_i |a_i - b_i| / max_i |b_i|, the normwise relative error of `a` against reference `b`.
inline double relative_error(const ParamVector& a, const ParamVector& b) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    ref = std::max(ref, std::abs(b[i]));
  }
  return ref == 0.0 ? diff : diff / ref;
}

}  // namespace unlearn::testing
