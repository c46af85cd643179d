#include "unlearn/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace unlearn {

namespace {

struct LayerLayout {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;
};

struct Layout {
  std::size_t embedding = 0;
  std::vector<LayerLayout> layers;
  std::size_t total = 0;
};

Layout make_layout(const ModelConfig& c) {
  Layout l;
  const auto V = static_cast<std::size_t>(c.vocab_size);
  if (c.arch == Arch::linear) {
    l.total = V * V;
    return l;
  }
  const auto C = static_cast<std::size_t>(c.context_window);
  const auto E = static_cast<std::size_t>(c.embed_dim);
  const auto H = static_cast<std::size_t>(c.hidden_dim);
  std::size_t offset = V * E;
  for (int i = 0; i < c.depth; ++i) {
    LayerLayout layer;
    layer.in = i == 0 ? C * E : H;
    layer.out = i == c.depth - 1 ? V : H;
    layer.weight = offset;
    offset += layer.in * layer.out;
    layer.bias = offset;
    offset += layer.out;
    l.layers.push_back(layer);
  }
  l.total = offset;
  return l;
}

void log_softmax_inplace(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  const double lse = m + std::log(s);
  for (double& v : z) v -= lse;
}

/// Forward/backward evaluator for a single next-token position. Holds the
/// activations of the most recent forward call.
class Evaluator {
 public:
  explicit Evaluator(const TinyLM& model)
      : cfg_(model.config), params_(model.params.span()), layout_(make_layout(model.config)) {
    if (cfg_.arch == Arch::mlp) {
      acts_.resize(layout_.layers.size());
      for (std::size_t l = 0; l < layout_.layers.size(); ++l) acts_[l].assign(layout_.layers[l].in, 0.0);
      slot_tokens_.assign(static_cast<std::size_t>(cfg_.context_window), -1);
      delta_.resize(std::max<std::size_t>(cfg_.hidden_dim, cfg_.vocab_size));
      back_.resize(std::max<std::size_t>(layout_.layers.front().in, cfg_.hidden_dim));
    }
    logits_.resize(static_cast<std::size_t>(cfg_.vocab_size));
  }

  /// Computes logits for the token after seq[0..prefix_len).
  const std::vector<double>& forward(const TokenId* seq, std::size_t prefix_len) {
    if (cfg_.arch == Arch::linear) {
      const auto V = static_cast<std::size_t>(cfg_.vocab_size);
      last_token_ = prefix_len == 0 ? -1 : seq[prefix_len - 1];
      if (last_token_ < 0) {
        std::fill(logits_.begin(), logits_.end(), 0.0);
      } else {
        const double* row = params_.data() + static_cast<std::size_t>(last_token_) * V;
        std::copy(row, row + V, logits_.begin());
      }
      return logits_;
    }

    const auto C = static_cast<std::size_t>(cfg_.context_window);
    const auto E = static_cast<std::size_t>(cfg_.embed_dim);
    const std::size_t visible = std::min(prefix_len, C);
    first_slot_ = C - visible;
    auto& x = acts_[0];
    std::fill(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(first_slot_ * E), 0.0);
    for (std::size_t j = first_slot_; j < C; ++j) {
      const TokenId tok = seq[prefix_len - (C - j)];
      slot_tokens_[j] = tok;
      const double* emb = params_.data() + layout_.embedding + static_cast<std::size_t>(tok) * E;
      std::copy(emb, emb + E, x.begin() + static_cast<std::ptrdiff_t>(j * E));
    }

    for (std::size_t l = 0; l < layout_.layers.size(); ++l) {
      const LayerLayout& layer = layout_.layers[l];
      const bool last = l + 1 == layout_.layers.size();
      const std::size_t begin = l == 0 ? first_slot_ * E : 0;
      const double* in = acts_[l].data();
      double* out = last ? logits_.data() : acts_[l + 1].data();
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double* w = params_.data() + layer.weight + o * layer.in;
        double s = params_[layer.bias + o];
        for (std::size_t i = begin; i < layer.in; ++i) s += w[i] * in[i];
        out[o] = last ? s : std::tanh(s);
      }
    }
    return logits_;
  }

  /// Backpropagates dL/dlogits through the last forward call into grad.
  void backward(const std::vector<double>& dlogits, std::span<double> grad) {
    const auto V = static_cast<std::size_t>(cfg_.vocab_size);
    if (cfg_.arch == Arch::linear) {
      if (last_token_ < 0) return;
      double* row = grad.data() + static_cast<std::size_t>(last_token_) * V;
      for (std::size_t v = 0; v < V; ++v) row[v] += dlogits[v];
      return;
    }

    const auto E = static_cast<std::size_t>(cfg_.embed_dim);
    const auto C = static_cast<std::size_t>(cfg_.context_window);
    std::copy(dlogits.begin(), dlogits.end(), delta_.begin());
    for (std::size_t l = layout_.layers.size(); l-- > 0;) {
      const LayerLayout& layer = layout_.layers[l];
      const std::size_t begin = l == 0 ? first_slot_ * E : 0;
      const double* in = acts_[l].data();
      std::fill(back_.begin() + static_cast<std::ptrdiff_t>(begin),
                back_.begin() + static_cast<std::ptrdiff_t>(layer.in), 0.0);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double d = delta_[o];
        if (d == 0.0) continue;
        grad[layer.bias + o] += d;
        const double* w = params_.data() + layer.weight + o * layer.in;
        double* gw = grad.data() + layer.weight + o * layer.in;
        for (std::size_t i = begin; i < layer.in; ++i) {
          gw[i] += d * in[i];
          back_[i] += w[i] * d;
        }
      }
      if (l > 0) {
        for (std::size_t i = 0; i < layer.in; ++i) delta_[i] = back_[i] * (1.0 - in[i] * in[i]);
      }
    }
    for (std::size_t j = first_slot_; j < C; ++j) {
      double* ge = grad.data() + layout_.embedding + static_cast<std::size_t>(slot_tokens_[j]) * E;
      for (std::size_t k = 0; k < E; ++k) ge[k] += back_[j * E + k];
    }
  }

 private:
  const ModelConfig& cfg_;
  std::span<const double> params_;
  Layout layout_;
  std::vector<std::vector<double>> acts_;
  std::vector<TokenId> slot_tokens_;
  std::vector<double> logits_;
  std::vector<double> delta_;
  std::vector<double> back_;
  std::size_t first_slot_ = 0;
  TokenId last_token_ = -1;
};

void check_tokens(const ModelConfig& c, const TokenSequence& seq, const char* what) {
  for (TokenId t : seq) {
    if (t < 0 || t >= c.vocab_size) throw std::out_of_range(std::string(what) + ": token id outside vocabulary");
  }
}

TokenSequence join(const TokenSequence& x, const TokenSequence& y) {
  TokenSequence seq;
  seq.reserve(x.size() + y.size());
  seq.insert(seq.end(), x.begin(), x.end());
  seq.insert(seq.end(), y.begin(), y.end());
  return seq;
}

TokenSequence scored_sequence(const TinyLM& model, const TokenSequence& x, const TokenSequence& y) {
  if (y.empty()) throw std::invalid_argument("empty response");
  if (x.size() + y.size() > static_cast<std::size_t>(model.config.context_window)) {
    throw std::length_error("prompt plus response exceeds the context window");
  }
  check_tokens(model.config, x, "prompt");
  check_tokens(model.config, y, "response");
  return join(x, y);
}

// Little-endian encoding helpers for the checkpoint format.
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint64_t get_le(std::string_view bytes, std::size_t& pos, int width) {
  if (pos + static_cast<std::size_t>(width) > bytes.size()) throw std::runtime_error("checkpoint: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  pos += static_cast<std::size_t>(width);
  return v;
}

constexpr std::string_view kCheckpointMagic = "ULKCKPT1";
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("vocab_size must be at least 2");
  if (context_window < 1) throw std::invalid_argument("context_window must be positive");
  if (arch == Arch::mlp) {
    if (embed_dim < 1 || hidden_dim < 1) throw std::invalid_argument("embed_dim and hidden_dim must be positive");
    if (depth < 2) throw std::invalid_argument("mlp depth must be at least 2");
  }
}

std::size_t ModelConfig::param_count() const {
  validate();
  return make_layout(*this).total;
}

std::string to_string(Arch arch) { return arch == Arch::linear ? "linear" : "mlp"; }

Arch parse_arch(std::string_view name) {
  if (name == "linear") return Arch::linear;
  if (name == "mlp") return Arch::mlp;
  throw std::invalid_argument("unknown architecture: " + std::string(name));
}

TinyLM TinyLM::zeros(const ModelConfig& config) { return TinyLM{config, ParamVector(config.param_count())}; }

TinyLM TinyLM::initialize(const ModelConfig& config, Seed seed) {
  TinyLM model = zeros(config);
  Rng rng = Rng::stream(seed, "init");
  if (config.arch == Arch::linear) {
    for (double& p : model.params) p = rng.uniform(-0.1, 0.1);
    return model;
  }
  const Layout layout = make_layout(config);
  const std::size_t embed_count = static_cast<std::size_t>(config.vocab_size) * config.embed_dim;
  for (std::size_t i = 0; i < embed_count; ++i) model.params[layout.embedding + i] = rng.uniform(-0.1, 0.1);
  for (const LayerLayout& layer : layout.layers) {
    for (std::size_t i = 0; i < layer.in * layer.out; ++i) model.params[layer.weight + i] = rng.uniform(-0.1, 0.1);
  }
  return model;
}

void TinyLM::validate() const {
  if (params.dim() != config.param_count()) {
    throw std::invalid_argument("parameter count " + std::to_string(params.dim()) + " does not match architecture (" +
                                std::to_string(config.param_count()) + ")");
  }
}

LogitMatrix forward_logits(const TinyLM& model, const TokenSequence& context) {
  if (context.size() > static_cast<std::size_t>(model.config.context_window)) {
    throw std::length_error("context longer than the context window; window it before calling");
  }
  check_tokens(model.config, context, "context");
  Evaluator eval(model);
  LogitMatrix out;
  out.rows = context.size();
  out.cols = static_cast<std::size_t>(model.config.vocab_size);
  out.data.reserve(out.rows * out.cols);
  for (std::size_t r = 0; r < context.size(); ++r) {
    const auto& z = eval.forward(context.data(), r + 1);
    out.data.insert(out.data.end(), z.begin(), z.end());
  }
  return out;
}

std::vector<double> next_token_logits(const TinyLM& model, const TokenSequence& prefix) {
  if (prefix.size() > static_cast<std::size_t>(model.config.context_window)) {
    throw std::length_error("prefix longer than the context window");
  }
  check_tokens(model.config, prefix, "prefix");
  Evaluator eval(model);
  return eval.forward(prefix.data(), prefix.size());
}

std::vector<double> per_token_logprobs(const TinyLM& model, const TokenSequence& x, const TokenSequence& y) {
  const TokenSequence seq = scored_sequence(model, x, y);
  Evaluator eval(model);
  std::vector<double> out;
  out.reserve(y.size());
  std::vector<double> z;
  for (std::size_t t = 0; t < y.size(); ++t) {
    z = eval.forward(seq.data(), x.size() + t);
    log_softmax_inplace(z);
    out.push_back(z[static_cast<std::size_t>(y[t])]);
  }
  return out;
}

double sequence_nll(const TinyLM& model, const TokenSequence& x, const TokenSequence& y) {
  const auto lp = per_token_logprobs(model, x, y);
  double s = 0.0;
  for (double v : lp) s += v;
  return -s / static_cast<double>(lp.size());
}

double accumulate_nll_gradient(const TinyLM& model, const TokenSequence& x, const TokenSequence& y, double coeff,
                               ParamVector& grad) {
  if (grad.dim() != model.params.dim()) throw std::invalid_argument("gradient buffer dimension mismatch");
  const TokenSequence seq = scored_sequence(model, x, y);
  Evaluator eval(model);
  const double per_token = coeff / static_cast<double>(y.size());
  double nll = 0.0;
  std::vector<double> z;
  for (std::size_t t = 0; t < y.size(); ++t) {
    z = eval.forward(seq.data(), x.size() + t);
    log_softmax_inplace(z);
    const auto target = static_cast<std::size_t>(y[t]);
    nll -= z[target];
    if (per_token != 0.0) {
      for (double& v : z) v = per_token * std::exp(v);
      z[target] -= per_token;
      eval.backward(z, grad.span());
    }
  }
  return nll / static_cast<double>(y.size());
}

ParamVector grad_sequence_nll(const TinyLM& model, std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("grad_sequence_nll: empty batch");
  ParamVector grad(model.params.dim());
  const double coeff = 1.0 / static_cast<double>(batch.size());
  for (const Example& ex : batch) accumulate_nll_gradient(model, ex.prompt, ex.response, coeff, grad);
  return grad;
}

double batch_nll(const TinyLM& model, std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("batch_nll: empty batch");
  double s = 0.0;
  for (const Example& ex : batch) s += sequence_nll(model, ex.prompt, ex.response);
  return s / static_cast<double>(batch.size());
}

TokenSequence greedy_decode(const TinyLM& model, const TokenSequence& prompt, int max_new) {
  if (max_new < 0) throw std::invalid_argument("max_new must be nonnegative");
  const auto window = static_cast<std::size_t>(model.config.context_window);
  if (prompt.size() > window) throw std::length_error("prompt longer than the context window");
  check_tokens(model.config, prompt, "prompt");
  Evaluator eval(model);
  TokenSequence seq = prompt;
  for (int n = 0; n < max_new && seq.size() < window; ++n) {
    const auto& z = eval.forward(seq.data(), seq.size());
    const auto best = static_cast<TokenId>(std::max_element(z.begin(), z.end()) - z.begin());
    if (best == model.config.end_token()) break;
    seq.push_back(best);
  }
  return seq;
}

std::string encode_checkpoint(const TinyLM& model) {
  model.validate();
  std::string out(kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, model.config.arch == Arch::linear ? 0u : 1u);
  put_u32(out, static_cast<std::uint32_t>(model.config.vocab_size));
  put_u32(out, static_cast<std::uint32_t>(model.config.context_window));
  put_u32(out, static_cast<std::uint32_t>(model.config.embed_dim));
  put_u32(out, static_cast<std::uint32_t>(model.config.hidden_dim));
  put_u32(out, static_cast<std::uint32_t>(model.config.depth));
  put_u64(out, model.params.dim());
  for (double p : model.params) put_u64(out, std::bit_cast<std::uint64_t>(p));
  return out;
}

TinyLM decode_checkpoint(std::string_view bytes) {
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) throw std::runtime_error("checkpoint: bad magic");
  std::size_t pos = kCheckpointMagic.size();
  const auto version = get_le(bytes, pos, 4);
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  ModelConfig cfg;
  const auto arch = get_le(bytes, pos, 4);
  if (arch > 1) throw std::runtime_error("checkpoint: unknown architecture tag");
  cfg.arch = arch == 0 ? Arch::linear : Arch::mlp;
  cfg.vocab_size = static_cast<int>(get_le(bytes, pos, 4));
  cfg.context_window = static_cast<int>(get_le(bytes, pos, 4));
  cfg.embed_dim = static_cast<int>(get_le(bytes, pos, 4));
  cfg.hidden_dim = static_cast<int>(get_le(bytes, pos, 4));
  cfg.depth = static_cast<int>(get_le(bytes, pos, 4));
  const auto count = get_le(bytes, pos, 8);
  cfg.validate();
  if (count != cfg.param_count()) throw std::runtime_error("checkpoint: parameter count does not match architecture");
  if (bytes.size() - pos != count * 8) throw std::runtime_error("checkpoint: payload size mismatch");
  ParamVector params(count);
  for (std::size_t i = 0; i < count; ++i) params[i] = std::bit_cast<double>(get_le(bytes, pos, 8));
  require_finite(params, "checkpoint");
  return TinyLM{cfg, std::move(params)};
}

void save_checkpoint(const TinyLM& model, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

TinyLM load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint not found: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace unlearn
