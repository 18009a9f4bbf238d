#include "cl3an/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace cl3an {

std::string shape_string(Index rows, Index cols) {
  std::ostringstream os;
  os << "[" << rows << "x" << cols << "]";
  return os.str();
}

std::string shape_string(const Tensor& t) { return shape_string(t.rows(), t.cols()); }

void require_shape(bool ok, const char* op, const Tensor& a, const Tensor& b) {
  if (!ok) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

bool all_finite(const Tensor& t) { return t.allFinite(); }

namespace {

// splitmix64 finaliser, used both for seeding and for deriving sub-seeds.
std::uint64_t mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : state_(mix(seed)) {}

std::uint64_t Rng::next_u64() {
  // xorshift64* over a splitmix-seeded state
  std::uint64_t x = state_ ? state_ : 0x2545F4914F6CDD1DULL;
  x ^= x >> 12;
  x ^= x << 25;
  x ^= x >> 27;
  state_ = x;
  return x * 0x2545F4914F6CDD1DULL;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below(0)");
  // rejection sampling removes modulo bias
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

bool Rng::bernoulli(double p) { return uniform() < p; }

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  return mix(mix(base) ^ (tag * 0xD6E8FEB86659FD93ULL));
}

Tensor glorot_uniform(Index fan_in, Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w(fan_in, fan_out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
  return w;
}

}  // namespace cl3an
