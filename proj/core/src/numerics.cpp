#include "unlearn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace unlearn {

namespace {

void require_same_dim(const ParamVector& a, const ParamVector& b, const char* op) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument(std::string(op) + ": dimension mismatch (" + std::to_string(a.dim()) +
                                " vs " + std::to_string(b.dim()) + ")");
  }
}

template <typename Op>
ParamVector zip(const ParamVector& a, const ParamVector& b, const char* name, Op op) {
  require_same_dim(a, b, name);
  ParamVector out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = op(a[i], b[i]);
  return out;
}

template <typename Op>
ParamVector map(const ParamVector& a, Op op) {
  ParamVector out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = op(a[i]);
  return out;
}

}  // namespace

bool ParamVector::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
}

ParamVector add(const ParamVector& a, const ParamVector& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}

ParamVector subtract(const ParamVector& a, const ParamVector& b) {
  return zip(a, b, "subtract", [](double x, double y) { return x - y; });
}

ParamVector scale(const ParamVector& a, double s) {
  return map(a, [s](double x) { return s * x; });
}

ParamVector hadamard(const ParamVector& a, const ParamVector& b) {
  return zip(a, b, "hadamard", [](double x, double y) { return x * y; });
}

ParamVector elementwise_max(const ParamVector& a, double floor) {
  return map(a, [floor](double x) { return std::max(x, floor); });
}

ParamVector clip(const ParamVector& a, double c) {
  if (!(c >= 0.0)) throw std::invalid_argument("clip: threshold must be nonnegative");
  return map(a, [c](double x) { return std::max(std::min(x, c), -c); });
}

void axpy(double s, const ParamVector& b, ParamVector& a) {
  require_same_dim(a, b, "axpy");
  for (std::size_t i = 0; i < a.dim(); ++i) a[i] += s * b[i];
}

double dot(const ParamVector& a, const ParamVector& b) {
  require_same_dim(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const ParamVector& a) { return std::sqrt(dot(a, a)); }

double max_abs(const ParamVector& a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

double cosine_similarity(const ParamVector& a, const ParamVector& b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) throw std::domain_error("cosine_similarity: zero vector");
  return dot(a, b) / (na * nb);
}

void require_finite(const ParamVector& v, std::string_view what) {
  for (std::size_t i = 0; i < v.dim(); ++i) {
    if (!std::isfinite(v[i])) {
      throw std::domain_error(std::string(what) + ": non-finite value at coordinate " + std::to_string(i));
    }
  }
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) noexcept {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng Rng::stream(Seed seed, std::string_view purpose) {
  // Mix the key through one SplitMix64 round so nearby seeds diverge.
  Rng mixer(seed.value ^ fnv1a64(purpose));
  return Rng(mixer.next_u64());
}

std::uint64_t Rng::next_u64() noexcept {
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

std::size_t Rng::index(std::size_t n) noexcept {
  // Multiply-shift; bias is below 2^-64 * n and irrelevant at these sizes.
  __extension__ using u128 = unsigned __int128;
  return static_cast<std::size_t>((static_cast<u128>(next_u64()) * n) >> 64);
}

double Rng::normal() noexcept {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

ParamVector finite_diff_gradient(const ScalarFunction& f, const ParamVector& theta, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_gradient: step must be positive");
  ParamVector grad(theta.dim());
  ParamVector probe = theta;
  for (std::size_t i = 0; i < theta.dim(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = f(probe);
    probe[i] = orig - step;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::domain_error("finite_diff_gradient: non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace unlearn
