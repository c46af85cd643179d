#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace unlearn {

/// Flat float64 parameter vector. Every model, gradient, optimizer buffer and
/// checkpoint payload is one of these.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
  ParamVector(std::initializer_list<double> init) : values_(init) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t dim() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  std::span<double> span() noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  bool all_finite() const noexcept;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

// Elementwise vector algebra. Binary ops throw std::invalid_argument on a
// dimension mismatch.
ParamVector add(const ParamVector& a, const ParamVector& b);
ParamVector subtract(const ParamVector& a, const ParamVector& b);
ParamVector scale(const ParamVector& a, double s);
ParamVector hadamard(const ParamVector& a, const ParamVector& b);
ParamVector elementwise_max(const ParamVector& a, double floor);
/// Symmetric two-sided clip: max(min(x, c), -c). c may be +infinity.
ParamVector clip(const ParamVector& a, double c);
/// a += s * b in place.
void axpy(double s, const ParamVector& b, ParamVector& a);

double dot(const ParamVector& a, const ParamVector& b);
double norm2(const ParamVector& a);
double max_abs(const ParamVector& a);
double cosine_similarity(const ParamVector& a, const ParamVector& b);

/// Throws std::domain_error naming `what` and the first bad coordinate.
void require_finite(const ParamVector& v, std::string_view what);

/// 64-bit seed. Identical seed and config give bit-identical results.
struct Seed {
  std::uint64_t value = 0;
  friend bool operator==(Seed, Seed) = default;
};

/// SplitMix64 generator. Each purpose ("init", "data", "shuffle", ...) gets
/// its own stream derived from (seed, purpose), so adding a new consumer never
/// shifts the draws seen by an existing one. Floating-point draws use the top
/// 53 bits, which keeps sequences identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t state) : state_(state) {}
  static Rng stream(Seed seed, std::string_view purpose);

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1).
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept;
  /// Uniform integer in [0, n). n must be > 0.
  std::size_t index(std::size_t n) noexcept;
  /// Standard normal via Box-Muller.
  double normal() noexcept;

  template <typename T>
  void shuffle(std::vector<T>& items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::uint64_t state_;
};

/// FNV-1a, used for stream keys and file checksums.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

using ScalarFunction = std::function<double(const ParamVector&)>;

/// Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h.
/// Throws std::domain_error naming the coordinate if f is non-finite there.
ParamVector finite_diff_gradient(const ScalarFunction& f, const ParamVector& theta, double step);

}  // namespace unlearn
