#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>

namespace repblend {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

// Counters for degenerate inputs that are handled by convention instead of
// by throwing. Callers pass a pointer when they want to observe them.
struct Diagnostics {
  std::size_t zero_norm_vectors = 0;
  std::size_t singleton_batches = 0;
  std::size_t all_unknown_rows = 0;
  std::size_t categories_without_positives = 0;
  std::size_t degenerate_f1_terms = 0;

  void merge(const Diagnostics& other) {
    zero_norm_vectors += other.zero_norm_vectors;
    singleton_batches += other.singleton_batches;
    all_unknown_rows += other.all_unknown_rows;
    categories_without_positives += other.categories_without_positives;
    degenerate_f1_terms += other.degenerate_f1_terms;
  }
};

inline Scalar logistic(Scalar x) { return Scalar(1) / (Scalar(1) + std::exp(-x)); }

/// Elementwise tanh through exp, which Eigen vectorises for double.
template <class Derived>
Matrix tanh_of(const Eigen::MatrixBase<Derived>& x) {
  const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> a = x.array();
  const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> t = (Scalar(-2) * a.abs()).exp();
  return (a.sign() * (Scalar(1) - t) / (Scalar(1) + t)).matrix();
}

/// Elementwise logistic, vectorised.
template <class Derived>
Matrix logistic_of(const Eigen::MatrixBase<Derived>& x) {
  return (Scalar(1) / (Scalar(1) + (-x.array()).exp())).matrix();
}

}  // namespace repblend
