#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cl3an {

/// Dense row-major matrix of doubles. Vectors are stored as N x 1 (column)
/// or 1 x D (row) matrices; scalars as 1 x 1.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_string(const Tensor& t);
std::string shape_string(Index rows, Index cols);

/// Throws ShapeError naming both shapes when `ok` is false.
void require_shape(bool ok, const char* op, const Tensor& a, const Tensor& b);

bool all_finite(const Tensor& t);

/// Seeded generator with a platform-independent uniform mapping, so that
/// parameter initialisation and splits reproduce across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of mantissa.
  double uniform();
  double uniform(double lo, double hi);
  /// Box-Muller; no cached second sample so draws stay order-stable.
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p);

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
};

/// Derives an independent stream seed from a base seed and a tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

Tensor glorot_uniform(Index fan_in, Index fan_out, Rng& rng);

}  // namespace cl3an
