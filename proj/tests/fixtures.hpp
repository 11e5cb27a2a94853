#pragma once

#include "repblend/types.hpp"

#include <algorithm>
#include <cmath>

namespace fixtures {

using repblend::Scalar;

/// Central difference of f() with respect to the scalar `x`, which is
/// restored afterwards.
template <class F>
Scalar central_difference(Scalar& x, F&& f, Scalar eps = 1e-6) {
  const Scalar saved = x;
  x = saved + eps;
  const Scalar up = f();
  x = saved - eps;
  const Scalar down = f();
  x = saved;
  return (up - down) / (2.0 * eps);
}

// Below 1e-4 the error is measured in absolute terms; central differences
// carry roughly 1e-10 of rounding noise.
inline Scalar relative_error(Scalar analytic, Scalar numeric) {
  const Scalar scale = std::max({std::abs(analytic), std::abs(numeric), Scalar(1e-4)});
  return std::abs(analytic - numeric) / scale;
}

}  // namespace fixtures
