#pragma once

#include "repblend/optim.hpp"
#include "repblend/types.hpp"

#include <stdexcept>

namespace repblend {

/// Per-category blend ratios kept as raw logits; the effective ratio is
/// logistic(raw), which stays inside (0, 1).
struct BlendCoefficients {
  Param raw;

  BlendCoefficients() = default;
  explicit BlendCoefficients(Eigen::Index categories, Scalar initial = 0.5)
      : raw(Matrix::Constant(categories, 1, std::log(initial / (1.0 - initial))), false) {
    if (!(initial > 0.0 && initial < 1.0)) {
      throw std::invalid_argument("blend coefficient must start inside (0, 1)");
    }
  }

  Eigen::Index categories() const { return raw.value.rows(); }

  Vector effective() const {
    return raw.value.col(0).unaryExpr([](Scalar x) { return logistic(x); });
  }

  /// Chain rule from d loss / d effective into the raw gradient.
  void accumulate(const Vector& grad_effective) {
    const Vector eff = effective();
    raw.grad.col(0).array() += grad_effective.array() * eff.array() * (1.0 - eff.array());
  }
};

}  // namespace repblend
